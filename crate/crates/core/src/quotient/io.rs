//! Columnar text layout for flow and ratio tables.
//!
//! ```text
//! layer class value support_count
//! 0 0 0.25 -
//! 0 1 0.75 -
//! ```
//!
//! One whitespace-separated row per `(layer, class)`. `-` marks an absent
//! value (a class without behavior support) or an absent count (exact tables).
//! Values use the shortest representation that parses back to the same bits.

use std::io::{BufRead, Write};

use super::{FlowTable, QuotientRatioTable};
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

const HEADER: &str = "layer class value support_count";

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRow {
    pub layer: usize,
    pub class: usize,
    pub value: Option<f64>,
    pub support_count: Option<usize>,
}

fn io_err(e: std::io::Error) -> OpeError {
    OpeError::Io {
        path: "<stream>".into(),
        message: e.to_string(),
    }
}

fn write_rows<W: Write>(mut out: W, rows: impl Iterator<Item = ColumnRow>) -> Result<()> {
    writeln!(out, "{HEADER}").map_err(io_err)?;
    for row in rows {
        let value = row.value.map_or("-".to_string(), |v| format!("{v:?}"));
        let count = row.support_count.map_or("-".to_string(), |c| c.to_string());
        writeln!(out, "{} {} {} {}", row.layer, row.class, value, count).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_flow_table<T: Scalar, W: Write>(out: W, table: &FlowTable<T>) -> Result<()> {
    write_rows(
        out,
        table.flows.iter().enumerate().flat_map(|(t, layer)| {
            layer.iter().enumerate().map(move |(c, v)| ColumnRow {
                layer: t,
                class: c,
                value: Some(v.as_f64()),
                support_count: None,
            })
        }),
    )
}

pub fn write_ratio_table<T: Scalar, W: Write>(out: W, table: &QuotientRatioTable<T>) -> Result<()> {
    let empirical = table.dataset_len().is_some();
    write_rows(
        out,
        table.rows().map(|(t, c, r, n)| ColumnRow {
            layer: t,
            class: c,
            value: r.map(|r| r.as_f64()),
            support_count: empirical.then_some(n),
        }),
    )
}

pub fn parse_columns<R: BufRead>(input: R) -> Result<Vec<ColumnRow>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line.split_whitespace().collect::<Vec<_>>().join(" ") != HEADER {
                return Err(OpeError::Parse {
                    line: i + 1,
                    message: format!("expected header {HEADER:?}"),
                });
            }
            seen_header = true;
            continue;
        }
        let parse_err = |message: String| OpeError::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [layer, class, value, count] = fields[..] else {
            return Err(parse_err(format!(
                "expected 4 columns, found {}",
                fields.len()
            )));
        };
        rows.push(ColumnRow {
            layer: layer
                .parse()
                .map_err(|e| parse_err(format!("layer: {e}")))?,
            class: class
                .parse()
                .map_err(|e| parse_err(format!("class: {e}")))?,
            value: match value {
                "-" => None,
                v => Some(v.parse().map_err(|e| parse_err(format!("value: {e}")))?),
            },
            support_count: match count {
                "-" => None,
                c => Some(
                    c.parse()
                        .map_err(|e| parse_err(format!("support_count: {e}")))?,
                ),
            },
        });
    }
    Ok(rows)
}

/// Reads a table written by [`write_flow_table`]; rows must be dense and in
/// layer-major order.
pub fn read_flow_table<T: Scalar, R: BufRead>(input: R) -> Result<FlowTable<T>> {
    let mut flows: Vec<Vec<T>> = Vec::new();
    for row in parse_columns(input)? {
        if row.layer == flows.len() {
            flows.push(Vec::new());
        }
        let layer = flows
            .get_mut(row.layer)
            .filter(|l| l.len() == row.class)
            .ok_or_else(|| {
                OpeError::Validation(format!(
                    "flow row ({}, {}) out of order",
                    row.layer, row.class
                ))
            })?;
        let v = row
            .value
            .ok_or_else(|| OpeError::Validation("flow value missing".into()))?;
        layer.push(T::lit(v));
    }
    Ok(FlowTable { flows })
}
