//! Comma-delimited text helpers shared by every file format in the crate.
//!
//! Files are UTF-8, `.` decimal separator, no quoting. Lines starting with
//! `#` before the header are metadata. Floats are written with Rust's
//! shortest round-trip formatting, so reading back yields identical bits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One parsed data line with its 1-based line number.
#[derive(Debug)]
pub struct Row {
    pub line: usize,
    pub cells: Vec<String>,
}

#[derive(Debug)]
pub struct Table {
    pub path: PathBuf,
    pub meta: Vec<String>,
    pub header: Vec<String>,
    pub header_line: usize,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut header = None;
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim_end_matches('\r');
            if header.is_none() {
                if let Some(m) = raw.strip_prefix('#') {
                    meta.push(m.trim().to_string());
                    continue;
                }
                if raw.trim().is_empty() {
                    continue;
                }
                header = Some((line, split(raw)));
                continue;
            }
            if raw.is_empty() {
                continue;
            }
            let cells = split(raw);
            let width = header.as_ref().map_or(0, |(_, h): &(usize, Vec<String>)| h.len());
            if cells.len() != width {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {width} cells, found {}", cells.len()),
                ));
            }
            rows.push(Row { line, cells });
        }
        let (header_line, header) = header.ok_or_else(|| Error::parse(path, 1, "file is empty (no header)"))?;
        Ok(Self {
            path: path.to_path_buf(),
            meta,
            header,
            header_line,
            rows,
        })
    }

    /// Fails unless the header equals `expected` exactly.
    pub fn expect_header(&self, expected: &[String]) -> Result<()> {
        if self.header != expected {
            return Err(Error::parse(
                &self.path,
                self.header_line,
                format!("malformed header: expected `{}`", expected.join(",")),
            ));
        }
        Ok(())
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().flat_map(|m| m.split_whitespace()).find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    pub fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::parse(&self.path, line, message)
    }

    pub fn f64_at(&self, row: &Row, col: usize) -> Result<f64> {
        let cell = &row.cells[col];
        cell.parse::<f64>().map_err(|_| {
            self.err(
                row.line,
                format!("column `{}`: `{cell}` is not a number", self.header[col]),
            )
        })
    }

    pub fn u64_at(&self, row: &Row, col: usize) -> Result<u64> {
        let cell = &row.cells[col];
        cell.parse::<u64>().map_err(|_| {
            self.err(
                row.line,
                format!("column `{}`: `{cell}` is not an integer", self.header[col]),
            )
        })
    }

    pub fn opt_usize_at(&self, row: &Row, col: usize) -> Result<Option<usize>> {
        let cell = &row.cells[col];
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse::<usize>().map(Some).map_err(|_| {
            self.err(
                row.line,
                format!("column `{}`: `{cell}` is not an index", self.header[col]),
            )
        })
    }
}

fn split(line: &str) -> Vec<String> {
    line.split(',').map(|c| c.trim().to_string()).collect()
}

/// `prefix0,prefix1,...` column names.
pub fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// Incremental builder for delimited text.
#[derive(Default)]
pub struct Writer {
    buf: String,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn meta(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.buf, "# {text}");
        self
    }

    pub fn row<I, S>(&mut self, cells: I) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for c in cells {
            if !first {
                self.buf.push(',');
            }
            self.buf.push_str(c.as_ref());
            first = false;
        }
        self.buf.push('\n');
        self
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Writes through a sibling temp file and renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}
