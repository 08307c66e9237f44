//! Versioned textual parameter dump.
//!
//! ```text
//! dgode-params 1
//! config {...json...}
//! tensor <name> <rows> <cols>
//! <row of decimals>
//! ...
//! ```
//! Tensors appear in [`ModelParams::tensors`] order. Decimals use Rust's
//! shortest round-trip formatting, so a dump reloads bit-exactly.

use std::fmt::Write as _;

use super::{ModelConfig, ModelParams};
use crate::error::{DgodeError, Result};

const MAGIC: &str = "dgode-params 1";

pub fn params_to_text(params: &ModelParams) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "config {}", serde_json::to_string(&params.config).expect("config serializes"));
    for (name, _, t) in params.tensors() {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
        for i in 0..t.rows() {
            let row: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

pub fn params_from_text(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| DgodeError::Parse { line: 0, message: format!("unexpected end of file, expected {what}") });
    let perr = |line: usize, message: String| DgodeError::Parse { line, message };

    let (line, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(perr(line, format!("expected {MAGIC:?}")));
    }
    let (line, config_line) = next("config")?;
    let json = config_line.strip_prefix("config ").ok_or_else(|| perr(line, "expected config record".into()))?;
    let config: ModelConfig = serde_json::from_str(json).map_err(|e| perr(line, e.to_string()))?;
    let mut params = ModelParams::init(config, 0)?;

    for (name, _, tensor) in params.tensors_mut() {
        let (line, head) = next("tensor header")?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let (rows, cols) = match fields.as_slice() {
            ["tensor", n, r, c] if *n == name => (
                r.parse::<usize>().map_err(|e| perr(line, e.to_string()))?,
                c.parse::<usize>().map_err(|e| perr(line, e.to_string()))?,
            ),
            _ => return Err(perr(line, format!("expected tensor {name}"))),
        };
        if (rows, cols) != tensor.shape() {
            return Err(DgodeError::Dimension(format!("line {line}: tensor {name} is {rows}x{cols}, config implies {:?}", tensor.shape())));
        }
        for i in 0..rows {
            let (line, body) = next("tensor row")?;
            let values: Vec<f64> = body
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| perr(line, format!("{v:?}: {e}"))))
                .collect::<Result<_>>()?;
            if values.len() != cols || values.iter().any(|v| !v.is_finite()) {
                return Err(perr(line, format!("expected {cols} finite values")));
            }
            tensor.row_mut(i).copy_from_slice(&values);
        }
    }
    Ok(params)
}
