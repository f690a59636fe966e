use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::csvmat::read_matrix_csv;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_TEXT_DIM: usize = 32;

/// Per-frame text semantics `[T, d_text]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddingStream<S> {
    pub vectors: Array2<S>,
    pub provider_id: String,
}

/// Maps a token list onto `frames` rows of embeddings.
pub trait TextEmbedder<S: Real>: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[String], frames: usize) -> Result<TextEmbeddingStream<S>>;
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Token covering frame `t` when `n_tokens` are spread evenly over `frames`:
/// token `i` owns frames `[i*T/N, (i+1)*T/N)`.
pub fn frame_token_index(t: usize, n_tokens: usize, frames: usize) -> Option<usize> {
    (n_tokens > 0 && t < frames).then(|| t * n_tokens / frames)
}

/// Deterministic stand-in for a language model: each token maps to a unit
/// vector drawn from a generator seeded by SHA-256 of `(seed, token)`.
#[derive(Clone, Debug)]
pub struct StubEmbedder {
    dim: usize,
    seed: u64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_TEXT_DIM, 0)
    }
}

impl<S: Real> TextEmbedder<S> for StubEmbedder {
    fn id(&self) -> &str {
        "stub"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String], frames: usize) -> Result<TextEmbeddingStream<S>> {
        let vectors: Vec<Vec<f64>> = tokens.iter().map(|t| self.token_vector(t)).collect();
        let mut m = Array2::zeros((frames, self.dim));
        for t in 0..frames {
            if let Some(i) = frame_token_index(t, tokens.len(), frames) {
                for (dst, &v) in m.row_mut(t).iter_mut().zip(&vectors[i]) {
                    *dst = S::lit(v);
                }
            }
        }
        Ok(TextEmbeddingStream {
            vectors: m,
            provider_id: "stub".into(),
        })
    }
}

/// Precomputed `[T, d]` embeddings read from a CSV file. Tokens are ignored;
/// the row count must equal the aligned frame count.
#[derive(Clone, Debug)]
pub struct FileEmbedder {
    id: String,
    vectors: Array2<f64>,
}

impl FileEmbedder {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self {
            id: format!("file:{}", path.display()),
            vectors: read_matrix_csv(path)?,
        })
    }
}

impl<S: Real> TextEmbedder<S> for FileEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    fn embed(&self, _tokens: &[String], frames: usize) -> Result<TextEmbeddingStream<S>> {
        if self.vectors.nrows() != frames {
            return Err(Error::Shape(format!(
                "{} has {} rows, expected {frames}",
                self.id,
                self.vectors.nrows()
            )));
        }
        Ok(TextEmbeddingStream {
            vectors: self.vectors.mapv(S::lit),
            provider_id: self.id.clone(),
        })
    }
}

/// Parses a provider flag: `stub` or `file:<path>`.
pub fn provider_from_spec<S: Real>(spec: &str, stub_dim: usize) -> Result<Box<dyn TextEmbedder<S>>> {
    if spec == "stub" {
        Ok(Box::new(StubEmbedder::new(stub_dim, 0)))
    } else if let Some(path) = spec.strip_prefix("file:") {
        Ok(Box::new(FileEmbedder::open(path)?))
    } else {
        Err(Error::UnknownProvider(spec.to_string()))
    }
}

/// Providers by id. Filled at startup, read-only afterwards.
pub struct ProviderRegistry<S: Real> {
    providers: Vec<Box<dyn TextEmbedder<S>>>,
}

impl<S: Real> Default for ProviderRegistry<S> {
    fn default() -> Self {
        Self {
            providers: vec![Box::new(StubEmbedder::default())],
        }
    }
}

impl<S: Real> ProviderRegistry<S> {
    pub fn empty() -> Self {
        Self { providers: Vec::new() }
    }

    pub fn register(&mut self, provider: Box<dyn TextEmbedder<S>>) {
        self.providers.retain(|p| p.id() != provider.id());
        self.providers.push(provider);
    }

    pub fn get(&self, id: &str) -> Result<&dyn TextEmbedder<S>> {
        self.providers
            .iter()
            .find(|p| p.id() == id)
            .map(|p| p.as_ref())
            .ok_or_else(|| Error::UnknownProvider(id.to_string()))
    }
}

/// Embeds `tokens` over `frames` rows with the provider registered as `provider_id`.
pub fn embed_text<S: Real>(
    tokens: &[String],
    frames: usize,
    registry: &ProviderRegistry<S>,
    provider_id: &str,
) -> Result<TextEmbeddingStream<S>> {
    registry.get(provider_id)?.embed(tokens, frames)
}
