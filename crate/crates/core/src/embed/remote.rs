//! Blocking JSON client for the model server.
//!
//! Endpoints (all `POST`, JSON bodies):
//!
//! | path          | request                               | response                         |
//! |---------------|---------------------------------------|----------------------------------|
//! | `/embed/image`| `{"images": [<base64 P6 PPM>, ...]}`  | `{"dim": d, "vectors": [[..]]}`  |
//! | `/embed/text` | `{"tokens": ["..", ...]}`             | `{"dim": d, "vectors": [[..]]}`  |
//! | `/parse`      | `{"sentence": ".."}`                  | `{"tokens": [..], "edges": [[head, dep], ..]}` |
//! | `/explain`    | `{"image": <base64 P6>, "grid_n": n}` | `{"text": ".."}`                 |
//!
//! Requests are idempotent and retried on transport failures and 5xx
//! responses with exponential backoff.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{EmbeddingProvider, EmbeddingVector, ProviderKind};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    /// Upper bound on requests in flight.
    pub parallelism: usize,
    /// Items per embedding request.
    pub chunk_size: usize,
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            parallelism: 4,
            chunk_size: 16,
            max_attempts: 3,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Tokenization and dependency arcs for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResponse {
    pub tokens: Vec<String>,
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
struct ExplainResponse {
    text: String,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

pub struct ModelServerClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl ModelServerClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if cfg.parallelism == 0 || cfg.chunk_size == 0 || cfg.max_attempts == 0 {
            return Err(Error::InvalidArgument(
                "remote parallelism, chunk size and attempts must be positive".into(),
            ));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        Ok(Self { cfg, agent })
    }

    pub fn endpoint(&self) -> &str {
        &self.cfg.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    fn attempt<T: DeserializeOwned>(&self, url: &str, body: &serde_json::Value) -> Result<T, Attempt> {
        let mut resp = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retry(format!("{url} returned status {status}")));
        }
        if status != 200 {
            return Err(Attempt::Fatal(Error::Provider(format!("{url} returned status {status}"))));
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(Error::Provider(format!("{url}: response schema: {e}"))))
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<T> {
        let url = self.url(path);
        let mut delay = self.cfg.backoff;
        let mut last = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            match self.attempt(&url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("attempt {attempt} for {url} failed: {msg}");
                    last = msg;
                    if attempt < self.cfg.max_attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Transport { attempts: self.cfg.max_attempts, message: last })
    }

    /// Runs `call` over `chunk_size` slices of `items` with at most
    /// `parallelism` requests in flight, concatenating results in input order.
    fn chunked<I: Sync, O: Send>(
        &self,
        items: &[I],
        call: impl Fn(&[I]) -> Result<Vec<O>> + Sync,
    ) -> Result<Vec<O>> {
        let chunks: Vec<&[I]> = items.chunks(self.cfg.chunk_size).collect();
        let slots: Vec<Mutex<Option<Vec<O>>>> = chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let workers = self.cfg.parallelism.min(chunks.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if failure.lock().expect("poisoned").is_some() {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(chunk) = chunks.get(i) else { break };
                    match call(chunk) {
                        Ok(out) => *slots[i].lock().expect("poisoned") = Some(out),
                        Err(e) => {
                            failure.lock().expect("poisoned").get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = failure.into_inner().expect("poisoned") {
            return Err(e);
        }
        Ok(slots
            .into_iter()
            .flat_map(|m| m.into_inner().expect("poisoned").expect("every chunk completed"))
            .collect())
    }

    fn embed(&self, path: &str, body: serde_json::Value, count: usize) -> Result<Vec<Vec<f64>>> {
        let resp: EmbedResponse = self.post(path, &body)?;
        if resp.vectors.len() != count {
            return Err(Error::Provider(format!(
                "{path}: {} vectors for {count} inputs",
                resp.vectors.len()
            )));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
            return Err(Error::Provider(format!(
                "{path}: vector of length {} in a dim-{} response",
                v.len(),
                resp.dim
            )));
        }
        Ok(resp.vectors)
    }

    pub fn embed_images(&self, images: &[RasterImage]) -> Result<Vec<Vec<f64>>> {
        self.chunked(images, |chunk| {
            let encoded: Vec<String> = chunk.iter().map(|img| BASE64.encode(img.to_ppm())).collect();
            self.embed("/embed/image", json!({ "images": encoded }), chunk.len())
        })
    }

    pub fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        self.chunked(tokens, |chunk| self.embed("/embed/text", json!({ "tokens": chunk }), chunk.len()))
    }

    pub fn parse(&self, sentence: &str) -> Result<ParseResponse> {
        let resp: ParseResponse = self.post("/parse", &json!({ "sentence": sentence }))?;
        if let Some(e) = resp.edges.iter().find(|e| e[0] >= resp.tokens.len() || e[1] >= resp.tokens.len()) {
            return Err(Error::Provider(format!(
                "/parse: edge {e:?} out of range for {} tokens",
                resp.tokens.len()
            )));
        }
        Ok(resp)
    }

    /// Raw explanation text for `image` with an `grid_n`x`grid_n` visual prompt.
    pub fn explain(&self, image: &RasterImage, grid_n: usize) -> Result<String> {
        let body = json!({ "image": BASE64.encode(image.to_ppm()), "grid_n": grid_n });
        Ok(self.post::<ExplainResponse>("/explain", &body)?.text)
    }
}

/// [`EmbeddingProvider`] backed by the model server.
pub struct RemoteProvider {
    client: ModelServerClient,
    image_dim: usize,
    text_dim: usize,
}

impl RemoteProvider {
    pub fn new(cfg: RemoteConfig, image_dim: usize, text_dim: usize) -> Result<Self> {
        Ok(Self { client: ModelServerClient::new(cfg)?, image_dim, text_dim })
    }

    pub fn client(&self) -> &ModelServerClient {
        &self.client
    }

    fn check(vectors: Vec<Vec<f64>>, dim: usize, what: &str) -> Result<Vec<EmbeddingVector>> {
        vectors
            .into_iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(Error::Provider(format!(
                        "{what} embedding of dim {} from server, expected {dim}",
                        v.len()
                    )));
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }

    fn id(&self) -> String {
        format!("remote:{}:image={}:text={}", self.client.endpoint(), self.image_dim, self.text_dim)
    }

    fn image_dim(&self) -> usize {
        self.image_dim
    }

    fn text_dim(&self) -> usize {
        self.text_dim
    }

    fn embed_images(&self, images: &[RasterImage]) -> Result<Vec<EmbeddingVector>> {
        Self::check(self.client.embed_images(images)?, self.image_dim, "image")
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>> {
        Self::check(self.client.embed_tokens(tokens)?, self.text_dim, "text")
    }
}
