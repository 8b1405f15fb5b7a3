//! Plain-text operator files.
//!
//! ```text
//! # psd-sense operators v1
//! dim 2
//! op z 1 0 0 0 0 0 0 0
//! op z 0 0 0 0 0 0 1 0
//! ```
//!
//! One `op` record per operator: a block label (no whitespace) followed by
//! the d² entries in row-major order, each as a `re im` pair of decimals.
//! Consecutive records with equal labels form one block.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::SensingMap;
use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;

const HEADER: &str = "# psd-sense operators v1";

/// Serializes labelled operators to the text format.
pub fn format_operators(ops: &[(String, &HermitianMatrix)]) -> Result<String> {
    let d = ops.first().map(|(_, m)| m.dim()).unwrap_or(0);
    let mut out = format!("{HEADER}\ndim {d}\n");
    for (label, m) in ops {
        if label.is_empty() || label.chars().any(char::is_whitespace) {
            return Err(Error::Domain(format!("operator label '{label}' must be non-empty without whitespace")));
        }
        out.push_str("op ");
        out.push_str(label);
        for z in m.as_matrix().transpose().iter() {
            write!(out, " {} {}", z.re, z.im).expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses the text format into labelled operators.
pub fn parse_operators(text: &str) -> Result<Vec<(String, HermitianMatrix)>> {
    let mut dim: Option<usize> = None;
    let mut ops = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("dim") => {
                let v = fields
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::Parse(format!("line {}: bad dim record", lineno + 1)))?;
                dim = Some(v);
            }
            Some("op") => {
                let d = dim.ok_or_else(|| Error::Parse(format!("line {}: op before dim", lineno + 1)))?;
                let label = fields
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: missing label", lineno + 1)))?
                    .to_string();
                let values = fields
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                if values.len() != 2 * d * d {
                    return Err(Error::Parse(format!(
                        "line {}: expected {} numbers, found {}",
                        lineno + 1,
                        2 * d * d,
                        values.len()
                    )));
                }
                let entries: Vec<Complex64> = values
                    .chunks(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect();
                let m = HermitianMatrix::new(DMatrix::from_row_slice(d, d, &entries))?;
                ops.push((label, m));
            }
            Some(other) => {
                return Err(Error::Parse(format!("line {}: unknown record '{other}'", lineno + 1)))
            }
            None => {}
        }
    }
    Ok(ops)
}

pub fn write_operators(path: &Path, ops: &[(String, &HermitianMatrix)]) -> Result<()> {
    fs::write(path, format_operators(ops)?)?;
    Ok(())
}

pub fn read_operators(path: &Path) -> Result<Vec<(String, HermitianMatrix)>> {
    parse_operators(&fs::read_to_string(path)?)
}

pub fn write_sensing_map(path: &Path, map: &SensingMap) -> Result<()> {
    fs::write(path, format_sensing_map(map)?)?;
    Ok(())
}

pub fn read_sensing_map(path: &Path) -> Result<SensingMap> {
    parse_sensing_map(&fs::read_to_string(path)?)
}

pub fn format_sensing_map(map: &SensingMap) -> Result<String> {
    let mut labelled = Vec::with_capacity(map.len());
    let mut ops = map.operators().iter();
    for block in map.blocks() {
        for op in ops.by_ref().take(block.len) {
            labelled.push((block.label.clone(), op));
        }
    }
    format_operators(&labelled)
}

pub fn parse_sensing_map(text: &str) -> Result<SensingMap> {
    let ops = parse_operators(text)?;
    if ops.is_empty() {
        return Err(Error::Parse("operator file contains no operators".into()));
    }
    let mut layout: Vec<(String, usize)> = Vec::new();
    for (label, _) in &ops {
        match layout.last_mut() {
            Some((l, n)) if l == label => *n += 1,
            _ => layout.push((label.clone(), 1)),
        }
    }
    SensingMap::with_blocks(ops.into_iter().map(|(_, m)| m).collect(), layout)
}
