//! Model config files, FASTA input and report hashing.
//!
//! Config schema (JSON):
//!
//! ```json
//! {
//!   "alphabet": ["s", "t", "a", "b"],
//!   "start_set": ["s", "t"],
//!   "classes": [["s"], ["t"]],
//!   "laws": { "s": {"kernel": [[0, 0, 1, 0], ...]}, "t": {"kernel": ...} },
//!   "epsilon": { "s": 0.5, "t": 0.5 }
//! }
//! ```
//!
//! `classes` defaults to singletons and `epsilon` is optional; kernel rows
//! follow alphabet order. A law may also be given as the bare row array.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dagger::{build_dagger_named, DaggerModel};
use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig, ModelSpec};

#[derive(Debug, Clone)]
pub struct ParsedModel {
    pub config: ModelConfig,
    pub epsilon: Option<BTreeMap<String, f64>>,
    pub model: ModelSpec,
    pub dagger: Option<DaggerModel>,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// JSON-pointer escaping of one reference token.
fn token(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| config_err(format!("/{key}"), "missing required field"))
}

fn string_list(v: &Value, path: &str) -> Result<Vec<String>> {
    let arr = v
        .as_array()
        .ok_or_else(|| config_err(path, "expected an array of strings"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_str()
                .map(str::to_string)
                .ok_or_else(|| config_err(format!("{path}/{i}"), "expected a string"))
        })
        .collect()
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| config_err(path, "expected a number"))
}

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| {
        config_err(
            format!("line {}, column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

/// Parses an `epsilon` object (symbol name → acceptance probability).
pub fn parse_epsilon(v: &Value, path: &str) -> Result<BTreeMap<String, f64>> {
    let obj = v
        .as_object()
        .ok_or_else(|| config_err(path, "expected an object mapping symbols to probabilities"))?;
    obj.iter()
        .map(|(k, x)| Ok((k.clone(), number(x, &format!("{path}/{}", token(k)))?)))
        .collect()
}

/// Reads an epsilon file: either a bare object or one with an `epsilon` key.
pub fn parse_epsilon_file(text: &str) -> Result<BTreeMap<String, f64>> {
    let v = parse_json(text)?;
    match v.get("epsilon") {
        Some(inner) => parse_epsilon(inner, "/epsilon"),
        None => parse_epsilon(&v, ""),
    }
}

pub fn parse_model_config(text: &str) -> Result<ParsedModel> {
    let root = parse_json(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| config_err("", "expected a JSON object"))?;
    let alphabet = string_list(field(obj, "alphabet")?, "/alphabet")?;
    let start_set = string_list(field(obj, "start_set")?, "/start_set")?;
    let classes = match obj.get("classes") {
        None => start_set.iter().map(|s| vec![s.clone()]).collect(),
        Some(v) => {
            let arr = v
                .as_array()
                .ok_or_else(|| config_err("/classes", "expected an array of arrays"))?;
            arr.iter()
                .enumerate()
                .map(|(i, c)| string_list(c, &format!("/classes/{i}")))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let laws_v = field(obj, "laws")?
        .as_object()
        .ok_or_else(|| config_err("/laws", "expected an object of kernels"))?;
    let mut laws = BTreeMap::new();
    let mut row_paths = BTreeMap::new();
    for (name, law) in laws_v {
        let mut base = format!("/laws/{}", token(name));
        let kernel = match law.as_object() {
            Some(o) => {
                if let Some(key) = o.keys().find(|k| *k != "kernel") {
                    return Err(config_err(format!("{base}/{}", token(key)), "unknown field"));
                }
                base.push_str("/kernel");
                o.get("kernel")
                    .ok_or_else(|| config_err(&base, "missing required field"))?
            }
            None => law,
        };
        let rows = kernel
            .as_array()
            .ok_or_else(|| config_err(&base, "expected an array of rows"))?;
        let rows = rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let rp = format!("{base}/{r}");
                row.as_array()
                    .ok_or_else(|| config_err(&rp, "expected an array of numbers"))?
                    .iter()
                    .enumerate()
                    .map(|(c, x)| number(x, &format!("{rp}/{c}")))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        laws.insert(name.clone(), rows);
        row_paths.insert(name.clone(), base);
    }
    for key in obj.keys() {
        if !["alphabet", "start_set", "classes", "laws", "epsilon"].contains(&key.as_str()) {
            return Err(config_err(format!("/{}", token(key)), "unknown field"));
        }
    }
    let config = ModelConfig {
        alphabet,
        start_set,
        classes,
        laws,
    };
    let model = build_model(&config).map_err(|e| locate(&config, &row_paths, e))?;
    let epsilon = obj.get("epsilon").map(|v| parse_epsilon(v, "/epsilon")).transpose()?;
    let dagger = epsilon
        .as_ref()
        .map(|eps| attach_epsilon(&model, eps))
        .transpose()?;
    Ok(ParsedModel {
        config,
        epsilon,
        model,
        dagger,
    })
}

pub fn attach_epsilon(model: &ModelSpec, eps: &BTreeMap<String, f64>) -> Result<DaggerModel> {
    build_dagger_named(model, eps).map_err(|e| match e {
        Error::UnknownSymbol(name) => config_err(
            format!("/epsilon/{}", token(&name)),
            format!("unknown symbol `{name}`"),
        ),
        Error::NotAStartSymbol(name) => config_err(
            format!("/epsilon/{}", token(&name)),
            format!("`{name}` is not a start symbol"),
        ),
        Error::InvalidEpsilon { symbol, value } => config_err(
            format!("/epsilon/{}", token(&symbol)),
            format!("acceptance probability must lie in (0, 1], got {value}"),
        ),
        other => other,
    })
}

/// Attaches a config path to kernel errors.
fn locate(config: &ModelConfig, row_paths: &BTreeMap<String, String>, e: Error) -> Error {
    let col = |name: &str| config.alphabet.iter().position(|a| a == name);
    let base = |law: &str| row_paths.get(law).cloned().unwrap_or_else(|| format!("/laws/{}", token(law)));
    match e {
        Error::KernelRowSum { ref law, row, .. } => {
            config_err(format!("{}/{row}", base(law)), e.to_string())
        }
        Error::KernelShape { ref law, row, .. } => {
            config_err(format!("{}/{row}", base(law)), e.to_string())
        }
        Error::KernelEntry {
            ref law,
            ref row_name,
            ref col_name,
            ..
        } => match (col(row_name), col(col_name)) {
            (Some(r), Some(c)) => config_err(format!("{}/{r}/{c}", base(law)), e.to_string()),
            _ => e,
        },
        other => other,
    }
}

/// Serialises a config in the documented schema.
pub fn config_to_json(config: &ModelConfig, epsilon: Option<&BTreeMap<String, f64>>) -> Value {
    let mut v = serde_json::to_value(config).expect("config serialises");
    for law in v["laws"].as_object_mut().expect("laws map").values_mut() {
        *law = serde_json::json!({ "kernel": law.take() });
    }
    if let Some(eps) = epsilon {
        v["epsilon"] = serde_json::to_value(eps).expect("epsilon serialises");
    }
    v
}

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn config_hash(value: &Value) -> String {
    let canonical = serde_json::to_string(value).expect("JSON value serialises");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidSymbolPolicy {
    Reject,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaRecord {
    pub header: String,
    pub sequence: String,
    /// Characters removed under [`InvalidSymbolPolicy::Skip`].
    pub skipped: usize,
}

/// Reads multi-record FASTA. Sequences are uppercased; characters outside
/// `letters` are rejected (with 1-based record number and 0-based offset in
/// the sequence) or skipped.
pub fn read_fasta<R: BufRead>(reader: R, letters: &[char], policy: InvalidSymbolPolicy) -> Result<Vec<FastaRecord>> {
    let mut records: Vec<FastaRecord> = Vec::new();
    let mut offset = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Fasta {
            record: records.len(),
            offset,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if let Some(h) = line.strip_prefix('>') {
            records.push(FastaRecord {
                header: h.trim().to_string(),
                sequence: String::new(),
                skipped: 0,
            });
            offset = 0;
            continue;
        }
        if line.trim().is_empty() || line.starts_with(';') {
            continue;
        }
        let n = records.len();
        let Some(rec) = records.last_mut() else {
            return Err(Error::Fasta {
                record: 0,
                offset: 0,
                message: "sequence data before the first header".into(),
            });
        };
        for ch in line.trim().chars().flat_map(char::to_uppercase) {
            if letters.contains(&ch) {
                rec.sequence.push(ch);
            } else if ch.is_whitespace() {
                continue;
            } else {
                match policy {
                    InvalidSymbolPolicy::Reject => {
                        return Err(Error::Fasta {
                            record: n,
                            offset,
                            message: format!("invalid symbol `{ch}`"),
                        })
                    }
                    InvalidSymbolPolicy::Skip => rec.skipped += 1,
                }
            }
            offset += 1;
        }
    }
    Ok(records)
}
