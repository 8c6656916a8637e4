//! Text layout of a [`SubsetFlowTable`]:
//!
//! ```text
//! slate_items 2 5 9
//! k 3
//! log_space false
//! flows
//! 1
//! 0.2
//! ...
//! ```
//!
//! followed by exactly `2^K` flow values in mask order, one per line,
//! printed so that they parse back to the same bits.

use std::io::{BufRead, Write};

use super::SubsetFlowTable;
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

fn io_err(e: std::io::Error) -> OpeError {
    OpeError::Io {
        path: "<stream>".into(),
        message: e.to_string(),
    }
}

pub fn write_subset_table<T: Scalar, W: Write>(
    mut out: W,
    table: &SubsetFlowTable<T>,
) -> Result<()> {
    let items: Vec<String> = table.slate_items.iter().map(usize::to_string).collect();
    writeln!(out, "slate_items {}", items.join(" ")).map_err(io_err)?;
    writeln!(out, "k {}", table.k()).map_err(io_err)?;
    writeln!(out, "log_space {}", table.log_space).map_err(io_err)?;
    writeln!(out, "flows").map_err(io_err)?;
    for v in &table.flow {
        writeln!(out, "{:?}", v.as_f64()).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_subset_table<T: Scalar, R: BufRead>(input: R) -> Result<SubsetFlowTable<T>> {
    let mut lines = input.lines().enumerate();
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (i, line) = lines.next().ok_or_else(|| OpeError::Parse {
            line: 0,
            message: format!("missing {key}"),
        })?;
        let line = line.map_err(io_err)?;
        let rest = line.strip_prefix(key).ok_or_else(|| OpeError::Parse {
            line: i + 1,
            message: format!("expected {key:?}"),
        })?;
        Ok((i + 1, rest.trim().to_string()))
    };
    let (ln, items) = field("slate_items")?;
    let slate_items = items
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| OpeError::Parse {
            line: ln,
            message: e.to_string(),
        })?;
    let (ln, k) = field("k")?;
    let k: usize = k.parse().map_err(|_| OpeError::Parse {
        line: ln,
        message: "bad k".into(),
    })?;
    if k != slate_items.len() || k > super::MAX_SLATE_SIZE {
        return Err(OpeError::Parse {
            line: ln,
            message: format!("k {k} does not match the slate"),
        });
    }
    let (ln, log) = field("log_space")?;
    let log_space = match log.as_str() {
        "true" => true,
        "false" => false,
        _ => {
            return Err(OpeError::Parse {
                line: ln,
                message: "log_space must be true or false".into(),
            })
        }
    };
    field("flows")?;
    let mut flow = Vec::with_capacity(1 << k);
    for (i, line) in lines {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| OpeError::Parse {
            line: i + 1,
            message: format!("bad flow {line:?}"),
        })?;
        flow.push(T::lit(v));
    }
    if flow.len() != 1 << k {
        return Err(OpeError::Parse {
            line: 0,
            message: format!("expected {} flows, found {}", 1usize << k, flow.len()),
        });
    }
    Ok(SubsetFlowTable {
        slate_items,
        log_space,
        flow,
    })
}
