//! Binary feature file holding per-layer token vectors.
//!
//! Layout (little-endian): the magic `LSLF`, a `u32` format version, then
//! for each sentence until end of file: `u32` id length, UTF-8 id bytes,
//! `u32` layer count, `u32` token count, `u32` dimension, and
//! `layers · tokens · dim` `f32` values in layer-major, token-major order.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LSLF";
pub const FORMAT_VERSION: u32 = 1;

/// Contextual features for one sentence, shaped `layers × tokens × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    sentence_id: String,
    num_layers: usize,
    num_tokens: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingBundle {
    pub fn new(
        sentence_id: impl Into<String>,
        num_layers: usize,
        num_tokens: usize,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let sentence_id = sentence_id.into();
        if num_layers == 0 || num_tokens == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "sentence {sentence_id:?}: dimensions must be positive, got {num_layers}×{num_tokens}×{dim}"
            )));
        }
        if values.len() != num_layers * num_tokens * dim {
            return Err(Error::Shape(format!(
                "sentence {sentence_id:?}: expected {} values, got {}",
                num_layers * num_tokens * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "sentence {sentence_id:?}: non-finite value at index {i}"
            )));
        }
        Ok(Self {
            sentence_id,
            num_layers,
            num_tokens,
            dim,
            values,
        })
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The vector of token `token` in layer `layer`.
    pub fn token(&self, layer: usize, token: usize) -> &[f32] {
        let start = (layer * self.num_tokens + token) * self.dim;
        &self.values[start..start + self.dim]
    }
}

/// Bundles in file order, indexed by sentence id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    bundles: Vec<EmbeddingBundle>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn new(bundles: Vec<EmbeddingBundle>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(bundles.len());
        for (i, b) in bundles.iter().enumerate() {
            if by_id.insert(b.sentence_id.clone(), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate sentence id {:?}",
                    b.sentence_id
                )));
            }
        }
        Ok(Self { bundles, by_id })
    }

    pub fn get(&self, sentence_id: &str) -> Option<&EmbeddingBundle> {
        self.by_id.get(sentence_id).map(|&i| &self.bundles[i])
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingBundle> {
        self.bundles.iter()
    }

    /// Shared `(layers, dim)` across all bundles, or an error if they differ.
    pub fn layers_and_dim(&self) -> Result<(usize, usize)> {
        let first = self
            .bundles
            .first()
            .ok_or_else(|| Error::invalid("embedding index is empty"))?;
        let shape = (first.num_layers, first.dim);
        for b in &self.bundles {
            if (b.num_layers, b.dim) != shape {
                return Err(Error::Shape(format!(
                    "sentence {:?} has {} layers × dim {}, expected {} × {}",
                    b.sentence_id, b.num_layers, b.dim, shape.0, shape.1
                )));
            }
        }
        Ok(shape)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

fn embed_err(id: Option<&str>, offset: usize, message: impl Into<String>) -> Error {
    Error::Embedding {
        sentence_id: id.map(str::to_owned),
        offset: offset as u64,
        message: message.into(),
    }
}

/// Parses and validates an embedding file already in memory.
pub fn parse_embeddings(bytes: &[u8]) -> Result<EmbeddingIndex> {
    let mut r = Reader { bytes, pos: 0 };
    match r.take(4) {
        Some(m) if m == MAGIC => {}
        _ => return Err(embed_err(None, 0, "missing LSLF magic")),
    }
    let version = r
        .u32()
        .ok_or_else(|| embed_err(None, 4, "truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(embed_err(
            None,
            4,
            format!("unsupported format version {version}"),
        ));
    }

    let mut bundles = Vec::new();
    while r.pos < bytes.len() {
        let record_start = r.pos;
        let id_len = r
            .u32()
            .ok_or_else(|| embed_err(None, record_start, "truncated id length"))?
            as usize;
        let id_bytes = r
            .take(id_len)
            .ok_or_else(|| embed_err(None, record_start + 4, "truncated sentence id"))?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| embed_err(None, record_start + 4, "sentence id is not UTF-8"))?
            .to_owned();

        let dims_at = r.pos;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r
                .u32()
                .ok_or_else(|| embed_err(Some(&id), dims_at, "truncated shape header"))?
                as usize;
        }
        let [layers, tokens, dim] = dims;
        if layers == 0 || tokens == 0 || dim == 0 {
            return Err(embed_err(
                Some(&id),
                dims_at,
                format!("shape {layers}×{tokens}×{dim} has a zero dimension"),
            ));
        }
        let count = layers
            .checked_mul(tokens)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| embed_err(Some(&id), dims_at, "shape overflows"))?;

        let payload_at = r.pos;
        let payload = r.take(count * 4).ok_or_else(|| {
            let available = (bytes.len() - payload_at) / 4;
            embed_err(
                Some(&id),
                payload_at,
                format!(
                    "shape mismatch: header declares {layers}×{tokens}×{dim} = {count} values, \
                     only {available} remain"
                ),
            )
        })?;
        let mut values = Vec::with_capacity(count);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(embed_err(
                    Some(&id),
                    payload_at + 4 * i,
                    format!("non-finite value {v}"),
                ));
            }
            values.push(v);
        }
        bundles.push(EmbeddingBundle {
            sentence_id: id,
            num_layers: layers,
            num_tokens: tokens,
            dim,
            values,
        });
    }
    EmbeddingIndex::new(bundles)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingIndex> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&bytes)
}

/// Serializes bundles in the given order.
pub fn encode_embeddings<'a>(bundles: impl IntoIterator<Item = &'a EmbeddingBundle>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for b in bundles {
        out.extend_from_slice(&(b.sentence_id.len() as u32).to_le_bytes());
        out.extend_from_slice(b.sentence_id.as_bytes());
        for d in [b.num_layers, b.num_tokens, b.dim] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &b.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    bundles: impl IntoIterator<Item = &'a EmbeddingBundle>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(bundles);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b
    }

    fn record(id: &str, dims: [u32; 3], values: &[f32]) -> Vec<u8> {
        let mut b = (id.len() as u32).to_le_bytes().to_vec();
        b.extend_from_slice(id.as_bytes());
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn minimal_file_loads() {
        let values: Vec<f32> = (0..24).map(|i| i as f32 * 0.5).collect();
        let mut bytes = header();
        bytes.extend(record("s0", [2, 3, 4], &values));
        let index = parse_embeddings(&bytes).unwrap();
        assert_eq!(index.len(), 1);
        let b = index.get("s0").unwrap();
        assert_eq!((b.num_layers(), b.num_tokens(), b.dim()), (2, 3, 4));
        assert_eq!(b.token(1, 2), &values[20..24]);
    }

    #[test]
    fn short_payload_is_shape_mismatch() {
        // header says T=3, payload only has 2 tokens
        let mut bytes = header();
        bytes.extend(record("s0", [2, 3, 4], &[1.0; 16]));
        let err = parse_embeddings(&bytes).unwrap_err();
        match err {
            Error::Embedding {
                sentence_id,
                message,
                offset,
            } => {
                assert_eq!(sentence_id.as_deref(), Some("s0"));
                assert!(message.contains("shape mismatch"), "{message}");
                assert_eq!(offset, 8 + 4 + 2 + 12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_is_rejected_with_sentence_id() {
        let mut values = vec![0.0f32; 24];
        values[7] = f32::NAN;
        let mut bytes = header();
        bytes.extend(record("ok", [1, 1, 1], &[1.0]));
        bytes.extend(record("bad", [2, 3, 4], &values));
        let err = parse_embeddings(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"bad\""), "{msg}");
        assert!(msg.contains("non-finite"), "{msg}");
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(parse_embeddings(b"NOPE\x01\0\0\0").is_err());
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&7u32.to_le_bytes());
        assert!(parse_embeddings(&bytes)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut bytes = header();
        bytes.extend(record("a", [1, 1, 1], &[1.0]));
        bytes.extend(record("a", [1, 1, 1], &[2.0]));
        assert!(parse_embeddings(&bytes).is_err());
    }

    #[test]
    fn encode_then_parse_is_identity() {
        let b1 = EmbeddingBundle::new("x", 1, 2, 2, vec![1.0, -2.5, 3.25, 0.0]).unwrap();
        let b2 = EmbeddingBundle::new("é", 2, 1, 1, vec![7.0, 8.0]).unwrap();
        let bytes = encode_embeddings([&b1, &b2]);
        let index = parse_embeddings(&bytes).unwrap();
        assert_eq!(index.get("x"), Some(&b1));
        assert_eq!(index.get("é"), Some(&b2));
        assert_eq!(encode_embeddings(index.iter()), bytes);
    }
}
