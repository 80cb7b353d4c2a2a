//! Dataset serialization: a structured JSON form and a line-oriented text form.
//!
//! Text layout, one record per line:
//!
//! ```text
//! dataset d=3 n=2 N=2 C=4 seed=42
//! x 0 <d*n values, row-major>
//! y 0 <n labels>
//! m 0 <n mask bits>
//! ```
//!
//! `y` and `m` lines are optional but must be present for every sequence or none.
//! `seed=-` means no seed was recorded.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, TokenSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "N")]
    pub num_sequences: usize,
    pub num_classes: usize,
    pub seed: Option<u64>,
    /// Row-major `d x n` matrices.
    pub sequences: Vec<Vec<f64>>,
    pub labels: Option<Vec<Vec<usize>>>,
    pub valid: Option<Vec<Vec<bool>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Json,
    Text,
}

impl DatasetFormat {
    /// `.json` selects JSON, anything else the text format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Text,
        }
    }
}

impl From<&LabeledDataset> for DatasetFile {
    fn from(ds: &LabeledDataset) -> Self {
        Self {
            d: ds.dim(),
            n: ds.seq_len(),
            num_sequences: ds.len(),
            num_classes: ds.num_classes,
            seed: ds.seed,
            sequences: ds
                .sequences
                .iter()
                .map(|s| s.as_array().iter().copied().collect())
                .collect(),
            labels: ds.labels.clone(),
            valid: ds.valid.clone(),
        }
    }
}

impl DatasetFile {
    pub fn into_dataset(self) -> Result<LabeledDataset> {
        if self.sequences.len() != self.num_sequences {
            return Err(Error::DimensionMismatch(format!(
                "header says N={} but {} sequences stored",
                self.num_sequences,
                self.sequences.len()
            )));
        }
        let seqs = self
            .sequences
            .into_iter()
            .map(|v| {
                let arr = Array2::from_shape_vec((self.d, self.n), v)
                    .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
                TokenSequence::new(arr)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ds = LabeledDataset::new(seqs)?;
        if let Some(valid) = self.valid {
            ds = ds.with_valid_mask(valid)?;
        }
        if let Some(labels) = self.labels {
            ds = ds.with_labels(labels, self.num_classes)?;
        }
        ds.seed = self.seed;
        Ok(ds)
    }
}

impl LabeledDataset {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DatasetFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<DatasetFile>(s)?.into_dataset()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let seed = self.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "dataset d={} n={} N={} C={} seed={seed}",
            self.dim(),
            self.seq_len(),
            self.len(),
            self.num_classes
        );
        for (i, s) in self.sequences.iter().enumerate() {
            out.push_str(&format!("x {i}"));
            for v in s.as_array().iter() {
                // `{:?}` prints the shortest representation that round-trips
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
            if let Some(labels) = &self.labels {
                out.push_str(&format!("y {i}"));
                for c in &labels[i] {
                    let _ = write!(out, " {c}");
                }
                out.push('\n');
            }
            if let Some(valid) = &self.valid {
                out.push_str(&format!("m {i}"));
                for &b in &valid[i] {
                    out.push_str(if b { " 1" } else { " 0" });
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut lines = s
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("dataset") {
            return Err(Error::Parse {
                line: hline,
                msg: "header must start with `dataset`".into(),
            });
        }
        let (mut d, mut n, mut big_n, mut c, mut seed) = (None, None, None, 0usize, None);
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| Error::Parse {
                line: hline,
                msg: format!("bad header field `{f}`"),
            })?;
            let num = |v: &str| {
                v.parse::<u64>().map_err(|e| Error::Parse {
                    line: hline,
                    msg: format!("{k}: {e}"),
                })
            };
            match k {
                "d" => d = Some(num(v)? as usize),
                "n" => n = Some(num(v)? as usize),
                "N" => big_n = Some(num(v)? as usize),
                "C" => c = num(v)? as usize,
                "seed" if v == "-" => seed = None,
                "seed" => seed = Some(num(v)?),
                _ => {
                    return Err(Error::Parse {
                        line: hline,
                        msg: format!("unknown header key `{k}`"),
                    })
                }
            }
        }
        let missing = |what: &str| Error::Parse {
            line: hline,
            msg: format!("header lacks {what}"),
        };
        let d = d.ok_or_else(|| missing("d"))?;
        let n = n.ok_or_else(|| missing("n"))?;
        let big_n = big_n.ok_or_else(|| missing("N"))?;

        let mut xs: Vec<Option<Vec<f64>>> = vec![None; big_n];
        let mut ys: Vec<Option<Vec<usize>>> = vec![None; big_n];
        let mut ms: Vec<Option<Vec<bool>>> = vec![None; big_n];
        for (line, text) in lines {
            let mut parts = text.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            let idx: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .filter(|&i| i < big_n)
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: "missing or out-of-range sequence index".into(),
                })?;
            let bad = |e: String| Error::Parse { line, msg: e };
            let rest: Vec<&str> = parts.collect();
            match tag {
                "x" => {
                    let vals = rest
                        .iter()
                        .map(|t| t.parse::<f64>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    if vals.len() != d * n {
                        return Err(bad(format!("expected {} values, got {}", d * n, vals.len())));
                    }
                    xs[idx] = Some(vals);
                }
                "y" => {
                    let vals = rest
                        .iter()
                        .map(|t| t.parse::<usize>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    if vals.len() != n {
                        return Err(bad(format!("expected {n} labels")));
                    }
                    ys[idx] = Some(vals);
                }
                "m" => {
                    let vals = rest
                        .iter()
                        .map(|t| match *t {
                            "1" => Ok(true),
                            "0" => Ok(false),
                            o => Err(bad(format!("mask bit `{o}`"))),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if vals.len() != n {
                        return Err(bad(format!("expected {n} mask bits")));
                    }
                    ms[idx] = Some(vals);
                }
                o => return Err(bad(format!("unknown record `{o}`"))),
            }
        }
        let all_or_none = |present: usize, what: &str| -> Result<bool> {
            match present {
                0 => Ok(false),
                p if p == big_n => Ok(true),
                _ => Err(Error::Parse {
                    line: hline,
                    msg: format!("{what} lines present for some sequences only"),
                }),
            }
        };
        let sequences = xs
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                x.ok_or_else(|| Error::Parse {
                    line: hline,
                    msg: format!("sequence {i} missing"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let has_y = all_or_none(ys.iter().flatten().count(), "y")?;
        let has_m = all_or_none(ms.iter().flatten().count(), "m")?;
        DatasetFile {
            d,
            n,
            num_sequences: big_n,
            num_classes: c,
            seed,
            sequences,
            labels: has_y.then(|| ys.into_iter().flatten().collect()),
            valid: has_m.then(|| ms.into_iter().flatten().collect()),
        }
        .into_dataset()
    }
}

pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let body = match DatasetFormat::from_path(path) {
        DatasetFormat::Json => ds.to_json()?,
        DatasetFormat::Text => ds.to_text(),
    };
    fs::write(path, body)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let body = fs::read_to_string(path)?;
    match DatasetFormat::from_path(path) {
        DatasetFormat::Json => LabeledDataset::from_json(&body),
        DatasetFormat::Text => LabeledDataset::from_text(&body),
    }
}
