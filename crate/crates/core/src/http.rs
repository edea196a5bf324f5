//! Blocking JSON-over-HTTP helper shared by the remote backends.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct HttpFailure {
    pub retryable: bool,
    pub message: String,
}

/// Counting gate that caps concurrent requests.
#[derive(Debug)]
pub(crate) struct InFlightGate {
    limit: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut current = self.current.lock().unwrap_or_else(|e| e.into_inner());
        while *current >= self.limit {
            current = self.freed.wait(current).unwrap_or_else(|e| e.into_inner());
        }
        *current += 1;
        InFlightPermit { gate: self }
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut current = self.gate.current.lock().unwrap_or_else(|e| e.into_inner());
        *current -= 1;
        self.gate.freed.notify_one();
    }
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    gate: InFlightGate,
}

impl JsonClient {
    pub fn new(timeout: Duration, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            gate: InFlightGate::new(max_in_flight),
        }
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &B,
    ) -> Result<R, HttpFailure> {
        let _permit = self.gate.acquire();
        let mut request = self.agent.post(url);
        if let Some(token) = bearer {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(|e| HttpFailure {
            retryable: matches!(
                e,
                ureq::Error::Io(_)
                    | ureq::Error::Timeout(_)
                    | ureq::Error::ConnectionFailed
                    | ureq::Error::HostNotFound
            ),
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err(HttpFailure {
                retryable: status == 429 || status >= 500,
                message: format!("HTTP {status}: {}", detail.chars().take(200).collect::<String>()),
            });
        }
        response.body_mut().read_json::<R>().map_err(|e| HttpFailure {
            retryable: false,
            message: format!("invalid response body: {e}"),
        })
    }
}
