//! Textual feature extraction.
//!
//! Transcripts are lowercased and split on whitespace; each token is then
//! trimmed of leading and trailing non-alphanumeric characters (interior
//! punctuation, like the apostrophe in "don't", is kept) and empty
//! residues are dropped. Tokens are looked up in a word-embedding table;
//! out-of-vocabulary tokens embed as zero vectors and are counted. An
//! empty transcript embeds as a single zero row so every advertisement
//! has a non-empty text sequence.
//!
//! Token sequences are usually far shorter than the 50-segment temporal
//! grid shared with the other modalities, so the text resolution
//! summaries use the empty-tolerant summarizer: segments with no tokens
//! are all-zero rows.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{Modality, ModalityFeatures, RESOLUTIONS};
use crate::matrix::Matrix;
use crate::timeline;

/// Errors from tokenization and embedding-table loading.
#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("embedding file declares dimension {declared}, expected {expected}")]
    DimMismatch { declared: usize, expected: usize },
}

/// Default embedding width; loaders reject other widths unless the
/// configuration overrides the expectation.
pub const EMBEDDING_DIM: usize = 300;

/// Lowercases, splits on whitespace, trims non-alphanumeric edges and
/// drops empty residues.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect()
}

/// Removes every token equal (case-insensitively) to one of `terms`.
pub fn ablate_terms(tokens: &[String], terms: &[String]) -> Vec<String> {
    let lowered: Vec<String> = terms.iter().map(|t| t.to_lowercase()).collect();
    tokens
        .iter()
        .filter(|t| {
            let lt = t.to_lowercase();
            !lowered.iter().any(|term| *term == lt)
        })
        .cloned()
        .collect()
}

/// In-memory word-embedding table.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Builds a table directly (tests, tools). All vectors must share
    /// `dim`.
    pub fn from_pairs(dim: usize, pairs: Vec<(String, Vec<f64>)>) -> Self {
        let mut vectors = HashMap::with_capacity(pairs.len());
        for (token, v) in pairs {
            assert_eq!(v.len(), dim, "vector width mismatch for {token}");
            vectors.insert(token, v);
        }
        Self { dim, vectors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

/// Loads a whitespace-separated embedding file:
///
/// ```text
/// <vocab_size> <dim>
/// <token> <v1> ... <v_dim>
/// ...
/// ```
///
/// The declared dimension must equal `expected_dim` (normally
/// [`EMBEDDING_DIM`]; configurations may override it). Errors name the
/// offending token where one exists.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingTable, TextError> {
    let text = fs::read_to_string(path).map_err(|source| TextError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let fail = |reason: String| TextError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
    let mut parts = header.split_whitespace();
    let vocab: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| fail("header must start with the vocabulary size".into()))?;
    let declared: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| fail("header must declare the dimension".into()))?;
    if parts.next().is_some() {
        return Err(fail("header has trailing tokens".into()));
    }
    if declared != expected_dim {
        return Err(TextError::DimMismatch {
            declared,
            expected: expected_dim,
        });
    }
    let mut vectors = HashMap::with_capacity(vocab);
    for line in lines {
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a first token");
        let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values =
            values.map_err(|_| fail(format!("token \"{token}\": non-numeric value")))?;
        if values.len() != declared {
            return Err(fail(format!(
                "token \"{token}\" has {} values, expected {declared}",
                values.len()
            )));
        }
        if vectors.insert(token.to_string(), values).is_some() {
            return Err(fail(format!("duplicate token \"{token}\"")));
        }
    }
    if vectors.len() != vocab {
        return Err(fail(format!(
            "header declares {vocab} tokens but file has {}",
            vectors.len()
        )));
    }
    Ok(EmbeddingTable {
        dim: declared,
        vectors,
    })
}

/// Embeds a token sequence as a `(len x dim)` matrix. Unknown tokens
/// become zero rows and are counted; an empty sequence becomes a single
/// zero row.
pub fn embed_tokens(tokens: &[String], table: &EmbeddingTable) -> (Matrix, usize) {
    if tokens.is_empty() {
        return (Matrix::zeros(1, table.dim()), 0);
    }
    let mut oov = 0;
    let mut m = Matrix::zeros(tokens.len(), table.dim());
    for (i, token) in tokens.iter().enumerate() {
        match table.get(token) {
            Some(v) => m.row_mut(i).copy_from_slice(v),
            None => oov += 1,
        }
    }
    (m, oov)
}

/// Column names of the embedded sequence.
pub fn embedding_schema(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("embedding dim {i}")).collect()
}

/// Full textual extraction for one transcript: token embeddings plus
/// empty-tolerant 50/20/5 summaries. Also reports the out-of-vocabulary
/// token count.
pub fn extract_text_features(
    transcript: &str,
    table: &EmbeddingTable,
    ablate: &[String],
) -> (ModalityFeatures, usize) {
    let mut tokens = tokenize(transcript);
    if !ablate.is_empty() {
        tokens = ablate_terms(&tokens, ablate);
    }
    let (high_res, oov) = embed_tokens(&tokens, table);
    let dims_schema = embedding_schema(table.dim());
    let summary_schema = timeline::summary_schema(&dims_schema);
    let res50 = timeline::summarize_allowing_empty(&high_res, RESOLUTIONS[0]);
    let res20 = timeline::summarize_allowing_empty(&high_res, RESOLUTIONS[1]);
    let res5 = timeline::summarize_allowing_empty(&high_res, RESOLUTIONS[2]);
    (
        ModalityFeatures {
            modality: Modality::Text,
            dims_schema,
            high_res,
            summary_schema,
            res50,
            res20,
            res5,
        },
        oov,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_trims_punctuation() {
        assert_eq!(tokenize("Buy NOW!!"), vec!["buy", "now"]);
        assert_eq!(tokenize("...hello..."), vec!["hello"]);
        assert_eq!(tokenize("'quoted'"), vec!["quoted"]);
        assert_eq!(tokenize("42%"), vec!["42"]);
        assert_eq!(tokenize("Café!"), vec!["café"]);
    }

    #[test]
    fn interior_punctuation_survives() {
        assert_eq!(tokenize("don't stop"), vec!["don't", "stop"]);
        assert_eq!(tokenize("state-of-the-art"), vec!["state-of-the-art"]);
    }

    #[test]
    fn empty_residues_are_dropped() {
        assert_eq!(tokenize("-- ?! ..."), Vec::<String>::new());
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("   \t\n  "), Vec::<String>::new());
    }

    #[test]
    fn ablation_is_case_insensitive() {
        let tokens = tokenize("Colax works, colax shines, rivals fade");
        let kept = ablate_terms(&tokens, &["CoLaX".to_string()]);
        assert_eq!(kept, vec!["works", "shines", "rivals", "fade"]);
        // No terms: identity.
        assert_eq!(ablate_terms(&tokens, &[]), tokens);
    }

    fn write_embeddings(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_a_well_formed_table() {
        let (_d, path) = write_embeddings("2 3\nbuy 1 2 3\nnow 0.5 -0.5 0\n");
        let table = load_embeddings(&path, 3).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.len(), 2);
        assert_eq!(table.get("buy").unwrap(), &[1.0, 2.0, 3.0]);
        assert!(table.get("never").is_none());
    }

    #[test]
    fn rejects_dim_and_count_violations() {
        let (_d1, p1) = write_embeddings("1 3\nbuy 1 2\n");
        let err = load_embeddings(&p1, 3).unwrap_err();
        assert!(err.to_string().contains("buy"), "{err}");

        let (_d2, p2) = write_embeddings("1 4\nbuy 1 2 3 4\n");
        assert!(matches!(
            load_embeddings(&p2, 3),
            Err(TextError::DimMismatch {
                declared: 4,
                expected: 3
            })
        ));

        let (_d3, p3) = write_embeddings("3 2\nbuy 1 2\nnow 3 4\n");
        assert!(load_embeddings(&p3, 2).is_err());

        let (_d4, p4) = write_embeddings("2 2\nbuy 1 2\nbuy 3 4\n");
        let err = load_embeddings(&p4, 2).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let (_d5, p5) = write_embeddings("1 2\nbuy 1 x\n");
        assert!(load_embeddings(&p5, 2).is_err());
    }

    fn tiny_table() -> EmbeddingTable {
        EmbeddingTable::from_pairs(
            2,
            vec![
                ("buy".to_string(), vec![1.0, 0.0]),
                ("now".to_string(), vec![0.0, 1.0]),
            ],
        )
    }

    #[test]
    fn embedding_counts_oov_and_pads_empty() {
        let table = tiny_table();
        let tokens = tokenize("Buy now, buy zorp!");
        let (m, oov) = embed_tokens(&tokens, &table);
        assert_eq!(m.rows(), 4);
        assert_eq!(oov, 1);
        assert_eq!(m.row(3), &[0.0, 0.0]);

        let (empty, oov0) = embed_tokens(&[], &table);
        assert_eq!(empty.rows(), 1);
        assert_eq!(empty.row(0), &[0.0, 0.0]);
        assert_eq!(oov0, 0);
    }

    #[test]
    fn extraction_builds_valid_features_for_short_text() {
        let table = tiny_table();
        let (features, oov) = extract_text_features("Buy now", &table, &[]);
        features.validate().unwrap();
        assert_eq!(oov, 0);
        assert_eq!(features.high_res.rows(), 2);
        assert_eq!(features.res50.rows(), 50);
        // Most coarse segments are empty (zero) for a 2-token text.
        let nonzero_rows = (0..50)
            .filter(|&s| features.res50.row(s).iter().any(|&v| v != 0.0))
            .count();
        assert_eq!(nonzero_rows, 2);
    }

    #[test]
    fn extraction_applies_ablation_before_embedding() {
        let table = tiny_table();
        let (plain, _) = extract_text_features("buy now", &table, &[]);
        let (ablated, _) = extract_text_features("buy now", &table, &["buy".to_string()]);
        assert_eq!(plain.high_res.rows(), 2);
        assert_eq!(ablated.high_res.rows(), 1);
        assert_eq!(ablated.high_res.row(0), &[0.0, 1.0]);
    }
}
