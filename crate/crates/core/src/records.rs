//! Line-delimited JSON record formats shared by the data generator, the
//! trainer, the paraphrase miner and the evaluator.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::atomic_write;
use crate::error::{Error, Result};

/// Two non-overlapping spans from one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPair {
    pub x1: String,
    pub x2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub src: String,
    pub tgt: String,
    pub src_lang: String,
    pub tgt_lang: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParaphrasePair {
    pub x: String,
    pub x_para: String,
    pub sim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

/// A system output to be scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub input: String,
    pub output: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub system: Option<String>,
}

/// A held-out sentence with its gold style degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSentence {
    pub text: String,
    pub lang: String,
    pub degree: f64,
}

/// One annotated pair: three labels from a closed category set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub labels: Vec<String>,
    pub task: String,
}

/// Reads a JSONL file; blank lines are skipped and parse errors carry the
/// line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::Record { path: path.display().to_string(), line: 0, reason: e.to_string() })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Like [`read_jsonl`] but keeps going past bad lines, returning them as
/// errors alongside the good records.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Vec<Error>)> {
    let file = File::open(path).map_err(|e| Error::Record { path: path.display().to_string(), line: 0, reason: e.to_string() })?;
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => good.push(r),
            Err(e) => bad.push(Error::Record { path: path.display().to_string(), line: i + 1, reason: e.to_string() }),
        }
    }
    Ok((good, bad))
}

/// Atomically writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let lines = records.iter().map(serde_json::to_string).collect::<std::result::Result<Vec<_>, _>>()?;
    atomic_write(path, |w| {
        for l in &lines {
            w.write_all(l.as_bytes())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Reads plain text, one sentence per non-empty line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::Record { path: path.display().to_string(), line: 0, reason: e.to_string() })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    atomic_write(path, |w| {
        for l in lines {
            w.write_all(l.as_bytes())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}
