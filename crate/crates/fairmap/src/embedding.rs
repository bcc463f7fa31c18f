//! Embedding vectors, file-based stores, and the deterministic synthetic
//! encoder.
//!
//! Vectors arrive from any external text encoder via JSON Lines files, or
//! from the synthetic encoder, which derives a unit-norm vector from a keyed
//! pseudo-random stream seeded by (seed, prompt bytes). File-backed vectors
//! are passed through untouched; pooling or flattening is the exporter's
//! responsibility.

use crate::error::{Error, Result};
use crate::lexicon::{Keyword, KeywordCategory, PromptInstance};
use crate::prng::{key_for, NormalStream};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const EMBEDDING_FORMAT: &str = "fairmap-embeddings";
pub const EMBEDDING_VERSION: u32 = 1;

/// Fixed-dimension vector of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("embedding vector must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &EmbeddingVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// A prompt and its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub prompt: PromptInstance,
    pub vector: EmbeddingVector,
}

/// Append-only collection of records sharing one dimension, unique by
/// prompt text. Immutable once construction finishes.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    records: Vec<EmbeddingRecord>,
    by_prompt: HashMap<String, usize>,
    dim: Option<usize>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        EmbeddingStore::default()
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        match self.dim {
            None => self.dim = Some(record.vector.dim()),
            Some(dim) if dim != record.vector.dim() => {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: record.vector.dim(),
                })
            }
            Some(_) => {}
        }
        if self.by_prompt.contains_key(&record.prompt.text) {
            return Err(Error::DuplicatePrompt(record.prompt.text.clone()));
        }
        self.by_prompt
            .insert(record.prompt.text.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dimension shared by all records; undefined until the first insert.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, prompt_text: &str) -> Option<&EmbeddingRecord> {
        self.by_prompt.get(prompt_text).map(|&i| &self.records[i])
    }

    /// Record for (keyword, attribute) metadata. Errors if two records carry
    /// the same pair (e.g. the store mixes templates).
    pub fn find_by_meta(&self, keyword: &str, attribute: Option<&str>) -> Result<Option<&EmbeddingRecord>> {
        let mut found = None;
        for record in &self.records {
            if record.prompt.keyword.text() == keyword
                && record.prompt.attribute.as_deref() == attribute
            {
                if found.is_some() {
                    return Err(Error::Invalid(format!(
                        "store has multiple records for keyword {keyword:?} attribute {attribute:?}"
                    )));
                }
                found = Some(record);
            }
        }
        Ok(found)
    }
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct FileRecord {
    prompt: String,
    keyword: String,
    attribute: Option<String>,
    vector: Vec<f64>,
}

/// Writes the store as JSON Lines: a header line then one record per line.
/// Numbers round-trip bit-exactly (shortest representation that reparses to
/// the same f64).
pub fn save_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let header = FileHeader {
        format: EMBEDDING_FORMAT.into(),
        version: EMBEDDING_VERSION,
        dim: store.dim().unwrap_or(0),
    };
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io_err)?;
    for record in store.records() {
        let line = FileRecord {
            prompt: record.prompt.text.clone(),
            keyword: record.prompt.keyword.text().to_string(),
            attribute: record.prompt.attribute.clone(),
            vector: record.vector.values().to_vec(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("record serializes")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Loads a JSON Lines embedding file written by [`save_embeddings`] or an
/// external exporter. Enforces the header, a uniform dimension, and unique
/// prompt texts; errors carry 1-based line numbers.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let reader = BufReader::new(file);

    let mut store = EmbeddingStore::new();
    let mut header: Option<FileHeader> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg,
        };
        match header {
            None => {
                let h: FileHeader =
                    serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
                if h.format != EMBEDDING_FORMAT {
                    return Err(parse_err(format!("unexpected format {:?}", h.format)));
                }
                if h.version != EMBEDDING_VERSION {
                    return Err(Error::VersionMismatch {
                        what: "embedding file".into(),
                        expected: EMBEDDING_VERSION,
                        got: h.version,
                    });
                }
                header = Some(h);
            }
            Some(ref h) => {
                let r: FileRecord =
                    serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
                if r.vector.len() != h.dim {
                    return Err(Error::DimMismatch {
                        expected: h.dim,
                        got: r.vector.len(),
                    });
                }
                let keyword = Keyword::new(r.keyword, KeywordCategory::Custom)
                    .map_err(|e| parse_err(e.to_string()))?;
                let vector =
                    EmbeddingVector::new(r.vector).map_err(|e| parse_err(e.to_string()))?;
                store.push(EmbeddingRecord {
                    prompt: PromptInstance {
                        text: r.prompt,
                        keyword,
                        attribute: r.attribute,
                    },
                    vector,
                })?;
            }
        }
    }
    if header.is_none() {
        return Err(Error::Parse {
            path: display,
            line: 1,
            msg: "missing header line".into(),
        });
    }
    Ok(store)
}

/// Source of embeddings: a loaded store (answers only known prompts) or the
/// synthetic generator (answers any string, deterministically).
#[derive(Debug, Clone)]
pub enum EncoderHandle {
    FileBacked(EmbeddingStore),
    Synthetic { dim: usize, seed: u64 },
}

impl EncoderHandle {
    pub fn synthetic(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("encoder dim must be positive".into()));
        }
        Ok(EncoderHandle::Synthetic { dim, seed })
    }

    pub fn file_backed(store: EmbeddingStore) -> Self {
        EncoderHandle::FileBacked(store)
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            EncoderHandle::FileBacked(store) => store.dim(),
            EncoderHandle::Synthetic { dim, .. } => Some(*dim),
        }
    }

    /// Embedding for `text`. Synthetic handles sample `dim` standard normals
    /// from the stream keyed by (seed, text bytes) and scale to unit
    /// Euclidean norm; file-backed handles look the text up verbatim.
    pub fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        match self {
            EncoderHandle::FileBacked(store) => store
                .get(text)
                .map(|r| r.vector.clone())
                .ok_or_else(|| Error::UnknownPrompt(text.to_string())),
            EncoderHandle::Synthetic { dim, seed } => {
                let mut stream = NormalStream::new(key_for(*seed, text.as_bytes()));
                let mut values = vec![0.0; *dim];
                stream.fill(&mut values);
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in &mut values {
                        *v /= norm;
                    }
                } else {
                    values[0] = 1.0;
                }
                EmbeddingVector::new(values)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Keyword, KeywordCategory};
    use proptest::prelude::*;

    fn record(prompt: &str, keyword: &str, attribute: Option<&str>, values: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            prompt: PromptInstance {
                text: prompt.into(),
                keyword: Keyword::new(keyword, KeywordCategory::Custom).unwrap(),
                attribute: attribute.map(str::to_string),
            },
            vector: EmbeddingVector::new(values).unwrap(),
        }
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![f64::INFINITY]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    #[test]
    fn store_enforces_uniform_dim() {
        let mut store = EmbeddingStore::new();
        store.push(record("a", "a", None, vec![1.0; 16])).unwrap();
        let err = store.push(record("b", "b", None, vec![1.0; 32])).unwrap_err();
        match err {
            Error::DimMismatch { expected, got } => {
                assert_eq!((expected, got), (16, 32));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn store_rejects_duplicate_prompts() {
        let mut store = EmbeddingStore::new();
        store.push(record("same", "a", None, vec![1.0, 2.0])).unwrap();
        let err = store.push(record("same", "b", None, vec![3.0, 4.0])).unwrap_err();
        assert!(matches!(err, Error::DuplicatePrompt(p) if p == "same"));
    }

    #[test]
    fn synthetic_encode_is_deterministic_and_unit_norm() {
        let enc = EncoderHandle::synthetic(16, 7).unwrap();
        let a = enc.encode("an image of a doctor").unwrap();
        let b = enc.encode("an image of a doctor").unwrap();
        assert_eq!(a.values(), b.values());
        assert!((a.norm() - 1.0).abs() < 1e-12, "norm {}", a.norm());
    }

    #[test]
    fn synthetic_encode_distinguishes_prompts() {
        let enc = EncoderHandle::synthetic(16, 7).unwrap();
        let a = enc.encode("an image of a doctor").unwrap();
        let b = enc.encode("an image of a nurse").unwrap();
        assert!(a.distance(&b).unwrap() > 0.0);
    }

    #[test]
    fn file_backed_miss_reports_prompt() {
        let enc = EncoderHandle::file_backed(EmbeddingStore::new());
        let err = enc.encode("absent").unwrap_err();
        assert!(matches!(err, Error::UnknownPrompt(p) if p == "absent"));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.jsonl");

        let mut store = EmbeddingStore::new();
        store
            .push(record("p1", "doctor", None, vec![0.1, -2.5e-7, 3.0]))
            .unwrap();
        store
            .push(record("p2", "doctor", Some("male"), vec![1.0 / 3.0, f64::MIN_POSITIVE, -0.0]))
            .unwrap();
        save_embeddings(&store, &path).unwrap();

        let reloaded = load_embeddings(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        for (a, b) in store.records().iter().zip(reloaded.records()) {
            assert_eq!(a.prompt.text, b.prompt.text);
            assert_eq!(a.prompt.attribute, b.prompt.attribute);
            let abits: Vec<u64> = a.vector.values().iter().map(|v| v.to_bits()).collect();
            let bbits: Vec<u64> = b.vector.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(abits, bbits);
        }
    }

    #[test]
    fn empty_store_round_trips_as_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        save_embeddings(&EmbeddingStore::new(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let reloaded = load_embeddings(&path).unwrap();
        assert!(reloaded.is_empty());
        assert_eq!(reloaded.dim(), None);
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"format\":\"fairmap-embeddings\",\"version\":1,\"dim\":2}\nnot json\n",
        )
        .unwrap();
        let err = load_embeddings(&path).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn load_rejects_dim_mismatch_against_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dim.jsonl");
        std::fs::write(
            &path,
            "{\"format\":\"fairmap-embeddings\",\"version\":1,\"dim\":3}\n\
             {\"prompt\":\"p\",\"keyword\":\"k\",\"attribute\":null,\"vector\":[1.0,2.0]}\n",
        )
        .unwrap();
        let err = load_embeddings(&path).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn load_rejects_wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.jsonl");
        std::fs::write(&path, "{\"format\":\"fairmap-embeddings\",\"version\":9,\"dim\":2}\n").unwrap();
        let err = load_embeddings(&path).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { got: 9, .. }));
    }

    proptest! {
        #[test]
        fn synthetic_norm_is_one_for_any_text(text in ".{0,40}", dim in 1usize..48, seed in any::<u64>()) {
            let enc = EncoderHandle::synthetic(dim, seed).unwrap();
            let v = enc.encode(&text).unwrap();
            prop_assert_eq!(v.dim(), dim);
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn save_load_preserves_bits(values in proptest::collection::vec(-1e6f64..1e6, 1..24)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.jsonl");
            let mut store = EmbeddingStore::new();
            store.push(record("p", "k", None, values.clone())).unwrap();
            save_embeddings(&store, &path).unwrap();
            let reloaded = load_embeddings(&path).unwrap();
            let bits: Vec<u64> = reloaded.records()[0].vector.values().iter().map(|v| v.to_bits()).collect();
            let expect: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, expect);
        }
    }
}
