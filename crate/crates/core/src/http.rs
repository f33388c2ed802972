//! Minimal JSON-over-HTTP client shared by the remote embedder and LLM clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("transport error talking to {url}: {message}")]
    Transport { url: String, message: String },
    #[error("bad response from {url}: {message}")]
    BadResponse { url: String, message: String },
}

#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    url: String,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent, url: url.into() }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, HttpError> {
        let mut resp = self.agent.post(&self.url).send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => HttpError::BadResponse {
                url: self.url.clone(),
                message: format!("HTTP status {code}"),
            },
            other => HttpError::Transport { url: self.url.clone(), message: other.to_string() },
        })?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| HttpError::BadResponse { url: self.url.clone(), message: e.to_string() })
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! One-thread HTTP responder for client tests.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread;

    /// Serves requests forever; `respond` maps a request body to a `(status, body)` pair.
    /// Returns the base URL and the list of received bodies.
    pub fn serve<F>(respond: F) -> (String, Arc<Mutex<Vec<String>>>)
    where
        F: Fn(&str) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = Arc::clone(&seen);
        let respond = Arc::new(respond);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let respond = Arc::clone(&respond);
                let seen = Arc::clone(&seen2);
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut content_length = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let l = line.trim_end();
                        if l.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = l.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                content_length = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                    let mut body = vec![0u8; content_length];
                    reader.read_exact(&mut body).unwrap();
                    let body = String::from_utf8(body).unwrap();
                    seen.lock().unwrap().push(body.clone());
                    let (status, out) = respond(&body);
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                        out.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        (format!("http://{addr}/"), seen)
    }
}
