//! Text generator access: a live OpenAI-compatible HTTP backend and a
//! content-addressed JSON Lines replay store.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use crate::prompting::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub mode: Mode,
    pub engine: String,
    pub prompt: String,
    pub instruction: Option<String>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RequestError {
    #[error("edit requests need an instruction")]
    MissingInstruction,
    #[error("completion requests take no instruction")]
    UnexpectedInstruction,
    #[error("temperature must be finite and non-negative, got {0}")]
    BadTemperature(f64),
}

impl LlmRequest {
    pub fn completion(engine: impl Into<String>, prompt: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            mode: Mode::Completion,
            engine: engine.into(),
            prompt: prompt.into(),
            instruction: None,
            temperature: 0.0,
            max_tokens: Some(max_tokens),
        }
    }

    pub fn edit(engine: impl Into<String>, input: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            mode: Mode::Edit,
            engine: engine.into(),
            prompt: input.into(),
            instruction: Some(instruction.into()),
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn check(&self) -> Result<(), RequestError> {
        match (self.mode, &self.instruction) {
            (Mode::Edit, None) => return Err(RequestError::MissingInstruction),
            (Mode::Completion, Some(_)) => return Err(RequestError::UnexpectedInstruction),
            _ => {}
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(RequestError::BadTemperature(self.temperature));
        }
        Ok(())
    }

    /// Fixed field order, compact JSON, UTF-8.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_bytes`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

/// One store line. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmExchange {
    pub digest: String,
    pub mode: Mode,
    pub engine: String,
    pub prompt: String,
    pub instruction: Option<String>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub response: String,
    pub recorded_at: String,
}

impl LlmExchange {
    pub fn new(request: &LlmRequest, response: impl Into<String>, recorded_at: DateTime<Utc>) -> Self {
        Self {
            digest: request.digest(),
            mode: request.mode,
            engine: request.engine.clone(),
            prompt: request.prompt.clone(),
            instruction: request.instruction.clone(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            response: response.into(),
            recorded_at: recorded_at.to_rfc3339_opts(SecondsFormat::Secs, true),
        }
    }

    pub fn request(&self) -> LlmRequest {
        LlmRequest {
            mode: self.mode,
            engine: self.engine.clone(),
            prompt: self.prompt.clone(),
            instruction: self.instruction.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("API returned {status}: {body}")]
    Api { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed API response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}: store opened read-only")]
    ReadOnly(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreMode {
    Read,
    Append,
}

/// Append-only exchange log. Lookups return the last exchange recorded for
/// a digest. Every append also writes a per-line SHA-256 to the `.sum`
/// sidecar so that [`ReplayStore::verify`] can catch edits to responses,
/// which the request digest alone does not cover.
#[derive(Debug)]
pub struct ReplayStore {
    path: PathBuf,
    mode: StoreMode,
    exchanges: Vec<LlmExchange>,
    latest: HashMap<String, usize>,
}

pub fn sidecar_path(store: &Path) -> PathBuf {
    let mut s = store.as_os_str().to_owned();
    s.push(".sum");
    PathBuf::from(s)
}

fn line_sum(line: &str) -> String {
    hex::encode(Sha256::digest(line.as_bytes()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Raw non-empty lines with 1-based line numbers.
/// Non-blank lines as bytes, so that verification can report encoding
/// damage instead of failing on it.
fn read_raw_lines(path: &Path) -> Result<Vec<(usize, Vec<u8>)>, StoreError> {
    let data = fs::read(path).map_err(io_err(path))?;
    Ok(data
        .split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix(b"\r").unwrap_or(l).to_vec()))
        .filter(|(_, l)| !l.iter().all(u8::is_ascii_whitespace))
        .collect())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn open_store(path: impl AsRef<Path>, mode: StoreMode) -> Result<ReplayStore, StoreError> {
    let path = path.as_ref().to_path_buf();
    if mode == StoreMode::Append && !path.exists() {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        File::create(&path).map_err(io_err(&path))?;
        File::create(sidecar_path(&path)).map_err(io_err(&path))?;
    }
    let mut store = ReplayStore {
        path: path.clone(),
        mode,
        exchanges: Vec::new(),
        latest: HashMap::new(),
    };
    for (line_no, line) in read_lines(&path)? {
        let ex: LlmExchange = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        store.latest.insert(ex.digest.clone(), store.exchanges.len());
        store.exchanges.push(ex);
    }
    Ok(store)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub lines: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

impl ReplayStore {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.exchanges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exchanges.is_empty()
    }

    pub fn exchanges(&self) -> &[LlmExchange] {
        &self.exchanges
    }

    pub fn lookup(&self, digest: &str) -> Option<&LlmExchange> {
        self.latest.get(digest).map(|&i| &self.exchanges[i])
    }

    pub fn record(&mut self, request: &LlmRequest, response: &str) -> Result<LlmExchange, StoreError> {
        self.record_at(request, response, Utc::now())
    }

    pub fn record_at(
        &mut self,
        request: &LlmRequest,
        response: &str,
        at: DateTime<Utc>,
    ) -> Result<LlmExchange, StoreError> {
        if self.mode != StoreMode::Append {
            return Err(StoreError::ReadOnly(self.path.clone()));
        }
        let ex = LlmExchange::new(request, response, at);
        let line = serde_json::to_string(&ex).expect("exchange serializes");
        let append = |path: &Path, text: &str| -> Result<(), StoreError> {
            let mut f = OpenOptions::new().append(true).create(true).open(path).map_err(io_err(path))?;
            writeln!(f, "{text}").map_err(io_err(path))
        };
        append(&self.path, &line)?;
        append(&sidecar_path(&self.path), &line_sum(&line))?;
        self.latest.insert(ex.digest.clone(), self.exchanges.len());
        self.exchanges.push(ex.clone());
        Ok(ex)
    }

    /// Re-reads the store from disk and checks every line against its
    /// request digest and its sidecar checksum.
    pub fn verify(path: impl AsRef<Path>) -> Result<VerifyReport, StoreError> {
        let path = path.as_ref();
        let lines = read_raw_lines(path)?;
        let sums = match read_lines(&sidecar_path(path)) {
            Ok(s) => Some(s.into_iter().map(|(_, l)| l.trim().to_string()).collect::<Vec<_>>()),
            Err(StoreError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e),
        };
        let mut report = VerifyReport {
            lines: lines.len(),
            problems: Vec::new(),
        };
        match &sums {
            None => report.problems.push(format!("{}: checksum file missing", sidecar_path(path).display())),
            Some(s) if s.len() != lines.len() => report.problems.push(format!(
                "checksum file has {} entries for {} store lines",
                s.len(),
                lines.len()
            )),
            _ => {}
        }
        for (k, (line_no, bytes)) in lines.iter().enumerate() {
            let Ok(line) = std::str::from_utf8(bytes) else {
                report.problems.push(format!("line {line_no}: invalid UTF-8"));
                continue;
            };
            match serde_json::from_str::<LlmExchange>(line) {
                Err(e) => report.problems.push(format!("line {line_no}: unparseable: {e}")),
                Ok(ex) if ex.request().digest() != ex.digest => {
                    report.problems.push(format!("line {line_no}: digest mismatch"))
                }
                Ok(_) => {}
            }
            if let Some(expected) = sums.as_ref().and_then(|s| s.get(k)) {
                if *expected != line_sum(line) {
                    report.problems.push(format!("line {line_no}: checksum mismatch"));
                }
            }
        }
        Ok(report)
    }
}

/// The text generator.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &LlmRequest) -> Result<String, GatewayError>;
}

impl Generator for ReplayStore {
    fn generate(&self, request: &LlmRequest) -> Result<String, GatewayError> {
        let digest = request.digest();
        self.lookup(&digest)
            .map(|ex| ex.response.clone())
            .ok_or(GatewayError::ReplayMiss(digest))
    }
}

/// Calls an inner generator and appends every exchange to a store.
pub struct Recorder<G> {
    inner: G,
    store: Mutex<ReplayStore>,
}

impl<G: Generator> Recorder<G> {
    pub fn new(inner: G, store: ReplayStore) -> Self {
        Self {
            inner,
            store: Mutex::new(store),
        }
    }

    pub fn into_store(self) -> ReplayStore {
        self.store.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl<G: Generator> Generator for Recorder<G> {
    fn generate(&self, request: &LlmRequest) -> Result<String, GatewayError> {
        let response = self.inner.generate(request)?;
        let mut store = self.store.lock().unwrap_or_else(|e| e.into_inner());
        store.record(request, &response)?;
        Ok(response)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("environment variable {0} is not set")]
pub struct MissingEnv(pub &'static str);

pub const ENV_API_KEY: &str = "CLINEX_API_KEY";
pub const ENV_API_BASE: &str = "CLINEX_API_BASE";

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
        }
    }

    pub fn from_env() -> Result<Self, MissingEnv> {
        let key = std::env::var(ENV_API_KEY).map_err(|_| MissingEnv(ENV_API_KEY))?;
        let base = std::env::var(ENV_API_BASE).map_err(|_| MissingEnv(ENV_API_BASE))?;
        Ok(Self::new(base, key))
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    slots: Semaphore,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let slots = Semaphore::new(config.max_in_flight);
        Ok(Self { config, client, slots })
    }

    fn body(request: &LlmRequest) -> (String, serde_json::Value) {
        let mut body = serde_json::Map::new();
        body.insert("model".into(), request.engine.clone().into());
        let endpoint = match request.mode {
            Mode::Completion => {
                body.insert("prompt".into(), request.prompt.clone().into());
                "completions"
            }
            Mode::Edit => {
                body.insert("input".into(), request.prompt.clone().into());
                body.insert("instruction".into(), request.instruction.clone().into());
                "edits"
            }
        };
        body.insert("temperature".into(), request.temperature.into());
        if let Some(n) = request.max_tokens {
            body.insert("max_tokens".into(), n.into());
        }
        (endpoint.to_string(), body.into())
    }

    fn attempt(&self, url: &str, body: &serde_json::Value) -> Result<String, GatewayError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    GatewayError::Timeout
                } else {
                    GatewayError::Transport(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Api { status, body: text });
        }
        let json: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
        json.pointer("/choices/0/text")
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| GatewayError::BadResponse("missing choices[0].text".into()))
    }
}

fn retryable(e: &GatewayError) -> bool {
    match e {
        GatewayError::Timeout => true,
        GatewayError::Api { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl Generator for LiveBackend {
    fn generate(&self, request: &LlmRequest) -> Result<String, GatewayError> {
        request.check()?;
        let (endpoint, body) = Self::body(request);
        let url = format!("{}/{endpoint}", self.config.base_url);
        let _permit = self.slots.acquire();
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.attempt(&url, &body) {
                Err(e) if retryable(&e) && attempt < self.config.max_attempts => {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
