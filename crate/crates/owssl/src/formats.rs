//! Text formats for matrices, priors, label lists and feature tables.
//!
//! Every file starts with a `# key=value ...` header line. Reals are written
//! with 17 significant digits so they read back to the same bits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use owssl_core::{ClassPrior, Features, ProbError, ProbMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse { line, msg: msg.into() }
}

pub fn read_file(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), FormatError> {
    fs::write(path, contents).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

/// Full-precision decimal form of a real.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

struct Header {
    pairs: Vec<(String, String)>,
}

impl Header {
    fn parse(line: &str) -> Result<Self, FormatError> {
        let body = line.strip_prefix('#').ok_or_else(|| parse_err(1, "missing '#' header"))?;
        let mut pairs = Vec::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| parse_err(1, format!("bad header token '{tok}'")))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(Self { pairs })
    }

    fn get(&self, key: &str) -> Result<&str, FormatError> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| parse_err(1, format!("header lacks '{key}'")))
    }

    fn usize(&self, key: &str) -> Result<usize, FormatError> {
        self.get(key)?.parse().map_err(|_| parse_err(1, format!("header '{key}' is not an integer")))
    }

    fn expect(&self, key: &str, value: &str) -> Result<(), FormatError> {
        let got = self.get(key)?;
        if got != value {
            return Err(parse_err(1, format!("expected {key}={value}, got {key}={got}")));
        }
        Ok(())
    }
}

/// Non-empty data lines with their 1-based line numbers.
type Body<'a> = Vec<(usize, &'a str)>;

/// Header plus body.
fn split(text: &str) -> Result<(Header, Body<'_>), FormatError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = Header::parse(first.trim())?;
    let body = lines.map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()).collect();
    Ok((header, body))
}

fn parse_reals(line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>, FormatError> {
    let vals = line
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| parse_err(line_no, format!("bad number '{}'", t.trim()))))
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != expected {
        return Err(parse_err(line_no, format!("expected {expected} values, got {}", vals.len())));
    }
    Ok(vals)
}

/// Rows of reals with the given header keys for row and column counts.
fn parse_table(
    text: &str,
    rows_key: &str,
    cols_key: &str,
    layout: &str,
) -> Result<(usize, usize, Vec<f64>), FormatError> {
    let (header, body) = split(text)?;
    header.expect("layout", layout)?;
    let rows = header.usize(rows_key)?;
    let cols = header.usize(cols_key)?;
    if body.len() != rows {
        return Err(FormatError::DimensionMismatch(format!("header says {rows} rows, file has {}", body.len())));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (line_no, line) in body {
        data.extend(parse_reals(line_no, line, cols)?);
    }
    Ok((rows, cols, data))
}

fn write_table(header: &str, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) -> String {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&fmt_real(at(r, c)));
        }
        out.push('\n');
    }
    out
}

/// Class-by-sample matrix without stochasticity checks.
pub fn parse_raw_matrix(text: &str) -> Result<(usize, usize, Vec<f64>), FormatError> {
    parse_table(text, "k", "n", "class-rows")
}

/// Column-stochastic class-by-sample matrix.
pub fn parse_matrix(text: &str) -> Result<ProbMatrix, FormatError> {
    let (k, n, rows) = parse_raw_matrix(text)?;
    Ok(ProbMatrix::from_rows(k, n, &rows)?)
}

pub fn write_matrix(m: &ProbMatrix) -> String {
    write_table(&format!("# k={} n={} layout=class-rows", m.k(), m.n()), m.k(), m.n(), |r, c| m.get(r, c))
}

/// A prior is a `K×1` matrix.
pub fn parse_prior(text: &str) -> Result<ClassPrior, FormatError> {
    let (k, n, rows) = parse_raw_matrix(text)?;
    if n != 1 {
        return Err(FormatError::DimensionMismatch(format!("prior must have n=1, got n={n}")));
    }
    debug_assert_eq!(rows.len(), k);
    Ok(ClassPrior::new(rows)?)
}

pub fn write_prior(p: &ClassPrior) -> String {
    write_table(&format!("# k={} n=1 layout=class-rows", p.k()), p.k(), 1, |r, _| p.get(r))
}

/// One zero-based index per line.
pub fn parse_labels(text: &str) -> Result<Vec<usize>, FormatError> {
    let (header, body) = split(text)?;
    header.expect("layout", "labels")?;
    header.expect("index-base", "0")?;
    let n = header.usize("n")?;
    if body.len() != n {
        return Err(FormatError::DimensionMismatch(format!("header says {n} labels, file has {}", body.len())));
    }
    body.into_iter().map(|(line_no, l)| l.parse().map_err(|_| parse_err(line_no, format!("bad label '{l}'")))).collect()
}

pub fn write_labels(labels: &[usize]) -> String {
    let mut out = format!("# n={} layout=labels index-base=0\n", labels.len());
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn parse_features(text: &str) -> Result<Features, FormatError> {
    let (m, d, data) = parse_table(text, "m", "d", "sample-rows")?;
    Ok(Features::new(m, d, data)?)
}

pub fn write_features(x: &Features) -> String {
    write_table(&format!("# m={} d={} layout=sample-rows", x.m(), x.d()), x.m(), x.d(), |r, c| x.row(r)[c])
}

/// Comma-separated reals on a command line.
pub fn parse_real_list(s: &str) -> Result<Vec<f64>, FormatError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| parse_err(0, format!("bad number '{}'", t.trim()))))
        .collect()
}

/// Comma-separated indices on a command line; empty means none.
pub fn parse_index_list(s: &str) -> Result<Vec<usize>, FormatError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| parse_err(0, format!("bad index '{}'", t.trim()))))
        .collect()
}
