//! Plain-text tensor dump.
//!
//! ```text
//! ccagnn-checkpoint 1
//! meta <key> <value>
//! tensor <name> <rows> <cols>
//! <cols whitespace-separated values>   (repeated `rows` times)
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is exact. Blank lines and lines starting with `#` are ignored.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

const MAGIC: &str = "ccagnn-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.push((key.into(), value.into()));
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, m: Matrix) {
        self.tensors.push((name.into(), m));
    }
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{MAGIC} {VERSION}")?;
    for (k, v) in &ckpt.meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Param(format!("checkpoint metadata key {k:?} is not writable")));
        }
        writeln!(w, "meta {k} {v}")?;
    }
    for (name, m) in &ckpt.tensors {
        if name.contains(char::is_whitespace) {
            return Err(Error::Param(format!("tensor name {name:?} contains whitespace")));
        }
        writeln!(w, "tensor {name} {} {}", m.rows(), m.cols())?;
        for i in 0..m.rows() {
            let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let reader = BufReader::new(input);
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|s| (i + 1, s)))
        .filter(|r| match r {
            Ok((_, s)) => !s.trim().is_empty() && !s.trim_start().starts_with('#'),
            Err(_) => true,
        });

    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };

    let (line_no, header) = lines
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(1, "empty checkpoint".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(parse_err(line_no, format!("missing `{MAGIC}` header")));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        other => return Err(parse_err(line_no, format!("unsupported version {other:?}"))),
    }

    let mut ckpt = Checkpoint::default();
    while let Some(entry) = lines.next() {
        let (line_no, line) = entry?;
        let mut parts = line.splitn(2, ' ');
        match parts.next() {
            Some("meta") => {
                let rest = parts.next().unwrap_or("");
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            }
            Some("tensor") => {
                let fields: Vec<&str> = parts.next().unwrap_or("").split_whitespace().collect();
                let [name, rows, cols] = fields[..] else {
                    return Err(parse_err(line_no, "tensor header needs name, rows, cols".into()));
                };
                let rows: usize = rows
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad row count {rows:?}")))?;
                let cols: usize = cols
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad column count {cols:?}")))?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (ln, row) = lines
                        .next()
                        .transpose()?
                        .ok_or_else(|| parse_err(line_no, format!("tensor {name} truncated")))?;
                    let before = data.len();
                    for tok in row.split_whitespace() {
                        data.push(
                            tok.parse::<f64>()
                                .map_err(|_| parse_err(ln, format!("bad value {tok:?}")))?,
                        );
                    }
                    if data.len() - before != cols {
                        return Err(parse_err(
                            ln,
                            format!("expected {cols} values, found {}", data.len() - before),
                        ));
                    }
                }
                ckpt.tensors
                    .push((name.to_string(), Matrix::from_vec(rows, cols, data)?));
            }
            _ => return Err(parse_err(line_no, format!("unexpected line {line:?}"))),
        }
    }
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(ckpt, fs::File::create(path)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(fs::File::open(path)?)
}
