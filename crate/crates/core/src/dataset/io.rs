use std::fs;
use std::path::Path;

use super::{DatasetError, LabeledCorpus, Result, Sample};
use crate::hash::fnv1a64;

/// Map a lowercased word to a token id.
///
/// Words of the form `t<digits>` (the rendering used for synthetic corpora)
/// map back to their numeric id. Every other word maps to its FNV-1a 64-bit
/// hash with the top bit set, so it cannot collide with a small synthetic id.
pub fn token_id(word: &str) -> u64 {
    if let Some(digits) = word.strip_prefix('t') {
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(id) = digits.parse::<u64>() {
                return id;
            }
        }
    }
    fnv1a64(word.as_bytes()) | (1 << 63)
}

/// Parse `label<TAB>text` lines. Blank lines are skipped; labels become class
/// indices in order of first appearance.
pub fn parse_corpus(text: &str, max_tokens: usize) -> Result<LabeledCorpus> {
    if max_tokens == 0 {
        return Err(DatasetError::InvalidParameter(
            "max_tokens must be positive".into(),
        ));
    }
    let mut class_names: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or(DatasetError::MalformedLine { line: i + 1 })?;
        let label = label.trim();
        if label.is_empty() {
            return Err(DatasetError::MalformedLine { line: i + 1 });
        }
        let class = match class_names.iter().position(|n| n == label) {
            Some(c) => c,
            None => {
                class_names.push(label.to_string());
                class_names.len() - 1
            }
        };
        let tokens = body
            .split_whitespace()
            .take(max_tokens)
            .map(|w| token_id(&w.to_lowercase()))
            .collect();
        samples.push(Sample {
            label: class,
            tokens,
        });
    }
    Ok(LabeledCorpus::from_parts_unchecked(samples, class_names))
}

pub fn load_corpus(path: impl AsRef<Path>, max_tokens: usize) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let corpus = parse_corpus(&text, max_tokens)?;
    if corpus.is_empty() {
        return Err(DatasetError::EmptyFile(path.to_path_buf()));
    }
    Ok(corpus)
}

pub fn write_corpus(corpus: &LabeledCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus.to_tsv()).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}
