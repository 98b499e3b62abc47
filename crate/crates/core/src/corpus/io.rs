//! Line-JSON dataset files and atomic file replacement.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{CorpusError, LabelSet, MrcExample, TaggedSentence};

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("dataset records serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| CorpusError::Json { line: i + 1, source })
        })
        .collect()
}

/// Reads NER records and checks each against `label_set`.
pub fn read_ner_jsonl(text: &str, label_set: &LabelSet) -> Result<Vec<TaggedSentence>, CorpusError> {
    let out: Vec<TaggedSentence> = from_jsonl(text)?;
    for s in &out {
        s.validate(label_set)?;
    }
    Ok(out)
}

pub fn read_mrc_jsonl(text: &str) -> Result<Vec<MrcExample>, CorpusError> {
    let out: Vec<MrcExample> = from_jsonl(text)?;
    for ex in &out {
        ex.validate()?;
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
