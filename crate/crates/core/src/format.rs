//! Line-delimited tensor file format.
//!
//! The first line is a JSON header; each following line is one JSON record
//! tagged by `kind`:
//!
//! ```text
//! {"format_version":1,"dataset_id":"imdb","category":"balanced","num_prompts":2,...}
//! {"kind":"choice","t":0,"x":0,"y":0,"logprobs":[-0.31,-1.2]}
//! {"kind":"sequence","t":0,"x":0,"sum_logprob":-41.5,"token_count":18}
//! {"kind":"content_free","t":0,"y":0,"input":"N/A","logit":-2.1}
//! {"kind":"domain","t":0,"y":0,"logit":-1.7}
//! ```
//!
//! Canonical order is header, then choice records by `(t, x, y)`, sequence
//! records by `(t, x)`, content-free records by `(t, y, input)` and domain
//! records by `(t, y)`. Writing a loaded canonical file reproduces it byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::tensor::{Category, ScoreTensor, SequenceStat, CONTENT_FREE_INPUTS};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub dataset_id: String,
    pub category: Category,
    pub num_prompts: usize,
    pub num_instances: usize,
    pub num_choices: usize,
    pub prompt_ids: Vec<String>,
    pub gold_labels: Vec<usize>,
    pub has_sequence_stats: bool,
    pub has_content_free: bool,
    pub has_domain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Choice { t: usize, x: usize, y: usize, logprobs: Vec<f64> },
    Sequence { t: usize, x: usize, sum_logprob: f64, token_count: u32 },
    ContentFree { t: usize, y: usize, input: String, logit: f64 },
    Domain { t: usize, y: usize, logit: f64 },
}

impl Record {
    fn key(&self) -> String {
        match self {
            Record::Choice { t, x, y, .. } => format!("choice(t={t}, x={x}, y={y})"),
            Record::Sequence { t, x, .. } => format!("sequence(t={t}, x={x})"),
            Record::ContentFree { t, y, input, .. } => format!("content_free(t={t}, y={y}, input={input:?})"),
            Record::Domain { t, y, .. } => format!("domain(t={t}, y={y})"),
        }
    }
}

fn record_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    FormatError::Record { key: key.into(), message: message.into() }.into()
}

fn in_range(key: &str, axis: &str, index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(record_error(key, format!("{axis} index {index} out of range (len {len})")));
    }
    Ok(())
}

fn check_header(h: &Header) -> Result<()> {
    if h.format_version != FORMAT_VERSION {
        return Err(FormatError::Version { found: h.format_version, expected: FORMAT_VERSION }.into());
    }
    if h.prompt_ids.len() != h.num_prompts {
        return Err(record_error(
            "header.prompt_ids",
            format!("{} ids for num_prompts {}", h.prompt_ids.len(), h.num_prompts),
        ));
    }
    if h.gold_labels.len() != h.num_instances {
        return Err(record_error(
            "header.gold_labels",
            format!("{} labels for num_instances {}", h.gold_labels.len(), h.num_instances),
        ));
    }
    if let Some((x, g)) = h.gold_labels.iter().enumerate().find(|(_, &g)| g >= h.num_choices) {
        return Err(record_error(
            format!("header.gold_labels[{x}]"),
            format!("label {g} out of range (num_choices {})", h.num_choices),
        ));
    }
    Ok(())
}

/// Parses and fully validates a tensor from any reader.
pub fn read_tensor<R: Read>(reader: R) -> Result<ScoreTensor> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let parse_err = |line: usize, e: &dyn std::fmt::Display| -> Error {
        FormatError::Parse { line, message: e.to_string() }.into()
    };
    let header_line = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.map_err(|e| parse_err(i + 1, &e))?;
                if !line.trim().is_empty() {
                    break (i + 1, line);
                }
            }
            None => return Err(parse_err(1, &"missing header")),
        }
    };
    // version first, so a future header layout still reports the version
    let raw: serde_json::Value =
        serde_json::from_str(&header_line.1).map_err(|e| parse_err(header_line.0, &e))?;
    if let Some(v) = raw.get("format_version").and_then(|v| v.as_u64()) {
        if v != u64::from(FORMAT_VERSION) {
            return Err(FormatError::Version { found: v as u32, expected: FORMAT_VERSION }.into());
        }
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| parse_err(header_line.0, &e))?;
    check_header(&header)?;

    let (nt, nx, ny) = (header.num_prompts, header.num_instances, header.num_choices);
    let mut choices: Vec<Option<Vec<f64>>> = vec![None; nt * nx * ny];
    let mut sequences: Vec<Option<SequenceStat>> = vec![None; nt * nx];
    let mut content_free: Vec<[Option<f64>; 3]> = vec![[None; 3]; nt * ny];
    let mut domain: Vec<Option<f64>> = vec![None; nt * ny];

    for (i, line) in lines {
        let line = line.map_err(|e| parse_err(i + 1, &e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, &e))?;
        let key = record.key();
        let duplicate = || record_error(&key, "duplicate record");
        match record {
            Record::Choice { t, x, y, logprobs } => {
                in_range(&key, "prompt", t, nt)?;
                in_range(&key, "instance", x, nx)?;
                in_range(&key, "choice", y, ny)?;
                if logprobs.is_empty() {
                    return Err(record_error(&key, "empty token list"));
                }
                let slot = &mut choices[(t * nx + x) * ny + y];
                if slot.is_some() {
                    return Err(duplicate());
                }
                *slot = Some(logprobs);
            }
            Record::Sequence { t, x, sum_logprob, token_count } => {
                if !header.has_sequence_stats {
                    return Err(record_error(&key, "header declares no sequence section"));
                }
                in_range(&key, "prompt", t, nt)?;
                in_range(&key, "instance", x, nx)?;
                let slot = &mut sequences[t * nx + x];
                if slot.is_some() {
                    return Err(duplicate());
                }
                *slot = Some(SequenceStat { sum_logprob, token_count });
            }
            Record::ContentFree { t, y, input, logit } => {
                if !header.has_content_free {
                    return Err(record_error(&key, "header declares no content_free section"));
                }
                in_range(&key, "prompt", t, nt)?;
                in_range(&key, "choice", y, ny)?;
                let c = CONTENT_FREE_INPUTS
                    .iter()
                    .position(|s| *s == input)
                    .ok_or_else(|| record_error(&key, "unknown content-free input"))?;
                let slot = &mut content_free[t * ny + y][c];
                if slot.is_some() {
                    return Err(duplicate());
                }
                *slot = Some(logit);
            }
            Record::Domain { t, y, logit } => {
                if !header.has_domain {
                    return Err(record_error(&key, "header declares no domain section"));
                }
                in_range(&key, "prompt", t, nt)?;
                in_range(&key, "choice", y, ny)?;
                let slot = &mut domain[t * ny + y];
                if slot.is_some() {
                    return Err(duplicate());
                }
                *slot = Some(logit);
            }
        }
    }

    let missing = |key: String| record_error(key, "missing record");
    let choice_token_logprobs = choices
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| {
                missing(format!("choice(t={}, x={}, y={})", i / (nx * ny), (i / ny) % nx, i % ny))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sequence_stats = header
        .has_sequence_stats
        .then(|| {
            sequences
                .into_iter()
                .enumerate()
                .map(|(i, s)| s.ok_or_else(|| missing(format!("sequence(t={}, x={})", i / nx, i % nx))))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let content_free_logits = header
        .has_content_free
        .then(|| {
            content_free
                .into_iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut out = [0.0; 3];
                    for (c, v) in row.into_iter().enumerate() {
                        out[c] = v.ok_or_else(|| {
                            missing(format!(
                                "content_free(t={}, y={}, input={:?})",
                                i / ny,
                                i % ny,
                                CONTENT_FREE_INPUTS[c]
                            ))
                        })?;
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let domain_logits = header
        .has_domain
        .then(|| {
            domain
                .into_iter()
                .enumerate()
                .map(|(i, d)| d.ok_or_else(|| missing(format!("domain(t={}, y={})", i / ny, i % ny))))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;

    let tensor = ScoreTensor {
        dataset_id: header.dataset_id,
        category: header.category,
        num_prompts: nt,
        num_instances: nx,
        num_choices: ny,
        prompt_ids: header.prompt_ids,
        gold_labels: header.gold_labels,
        choice_token_logprobs,
        sequence_stats,
        content_free_logits,
        domain_logits,
    };
    tensor.validate()?;
    Ok(tensor)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<ScoreTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    read_tensor(file)
}

pub fn header_of(tensor: &ScoreTensor) -> Header {
    Header {
        format_version: FORMAT_VERSION,
        dataset_id: tensor.dataset_id.clone(),
        category: tensor.category,
        num_prompts: tensor.num_prompts,
        num_instances: tensor.num_instances,
        num_choices: tensor.num_choices,
        prompt_ids: tensor.prompt_ids.clone(),
        gold_labels: tensor.gold_labels.clone(),
        has_sequence_stats: tensor.sequence_stats.is_some(),
        has_content_free: tensor.content_free_logits.is_some(),
        has_domain: tensor.domain_logits.is_some(),
    }
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

/// Writes `tensor` in canonical order.
pub fn write_tensor<W: Write>(tensor: &ScoreTensor, writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    write_line(&mut w, &header_of(tensor))?;
    let (nx, ny) = (tensor.num_instances, tensor.num_choices);
    for (i, logprobs) in tensor.choice_token_logprobs.iter().enumerate() {
        let (t, x, y) = (i / (nx * ny), (i / ny) % nx, i % ny);
        write_line(&mut w, &Record::Choice { t, x, y, logprobs: logprobs.clone() })?;
    }
    if let Some(stats) = &tensor.sequence_stats {
        for (i, s) in stats.iter().enumerate() {
            write_line(
                &mut w,
                &Record::Sequence { t: i / nx, x: i % nx, sum_logprob: s.sum_logprob, token_count: s.token_count },
            )?;
        }
    }
    if let Some(cf) = &tensor.content_free_logits {
        for (i, row) in cf.iter().enumerate() {
            for (input, &logit) in CONTENT_FREE_INPUTS.iter().zip(row) {
                let (t, y) = (i / ny, i % ny);
                write_line(&mut w, &Record::ContentFree { t, y, input: input.to_string(), logit })?;
            }
        }
    }
    if let Some(dom) = &tensor.domain_logits {
        for (i, &logit) in dom.iter().enumerate() {
            write_line(&mut w, &Record::Domain { t: i / ny, y: i % ny, logit })?;
        }
    }
    w.flush()
}

pub fn save_tensor(tensor: &ScoreTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| FormatError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io)?;
    write_tensor(tensor, file).map_err(io)?;
    Ok(())
}

pub fn tensor_to_bytes(tensor: &ScoreTensor) -> Vec<u8> {
    let mut buf = Vec::new();
    write_tensor(tensor, &mut buf).expect("writing to a Vec cannot fail");
    buf
}
