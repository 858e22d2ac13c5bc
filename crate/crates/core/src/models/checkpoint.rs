//! Parameter checkpoints.
//!
//! ```text
//! fedhet-params,1
//! segment,l0.weight,encoder,32,8
//! ...
//! values,<count>
//! <one value per line>
//! ```
//!
//! Values use shortest round-trip float formatting, so a load reproduces the
//! exact bits that were saved.

use std::path::Path;
use std::sync::Arc;

use super::params::{Layout, ModelParams, Role};
use crate::error::{Error, Result};
use crate::tabular::{fmt_f64, write_atomic};

const MAGIC: &str = "fedhet-params,1";

pub fn params_to_string(params: &ModelParams) -> String {
    let mut out = String::with_capacity(params.len() * 22 + 256);
    out.push_str(MAGIC);
    out.push('\n');
    for s in params.layout().segments() {
        out.push_str(&format!(
            "segment,{},{},{},{}\n",
            s.name,
            s.role.as_str(),
            s.rows,
            s.cols
        ));
    }
    out.push_str(&format!("values,{}\n", params.len()));
    for v in params.values() {
        out.push_str(&fmt_f64(*v));
        out.push('\n');
    }
    out
}

pub fn params_from_str(path: &Path, text: &str) -> Result<ModelParams> {
    let err = |line: usize, msg: &str| Error::parse(path, line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, MAGIC)) => {}
        Some((n, _)) => return Err(err(n, "not a parameter checkpoint")),
        None => return Err(err(1, "empty checkpoint")),
    }
    let mut segments = Vec::new();
    let count = loop {
        let (n, line) = lines.next().ok_or_else(|| err(0, "missing values section"))?;
        let cells: Vec<&str> = line.split(',').collect();
        match cells.as_slice() {
            ["segment", name, role, rows, cols] => {
                let role = Role::parse(role).ok_or_else(|| err(n, "unknown segment role"))?;
                let rows = rows.parse().map_err(|_| err(n, "bad row count"))?;
                let cols = cols.parse().map_err(|_| err(n, "bad column count"))?;
                segments.push((name.to_string(), role, rows, cols));
            }
            ["values", count] => break count.parse::<usize>().map_err(|_| err(n, "bad value count"))?,
            _ => return Err(err(n, "malformed layout line")),
        }
    };
    let layout = Layout::new(segments);
    if layout.len() != count {
        return Err(err(0, "value count does not match layout"));
    }
    let mut values = Vec::with_capacity(count);
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        values.push(line.parse::<f64>().map_err(|_| err(n, "bad value"))?);
    }
    if values.len() != count {
        return Err(err(0, &format!("expected {count} values, found {}", values.len())));
    }
    ModelParams::new(values, Arc::new(layout))
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    write_atomic(path, params_to_string(params).as_bytes())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    params_from_str(path, &text)
}
