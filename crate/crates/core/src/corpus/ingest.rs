use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::{info, warn};
use serde_json::Value;

use super::{DatasetDescriptor, InputFormat, Split, UnifiedRecord};
use crate::error::{Error, Result};
use crate::util::{read_jsonl, write_jsonl};

/// Raw rows as `(row index, column -> cell)`.
type RawRow = (usize, BTreeMap<String, String>);

fn read_delimited(path: &Path, delimiter: u8, wanted: &[&str]) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::MalformedRow {
                row: 0,
                reason: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let mut index = BTreeMap::new();
    for col in wanted {
        let pos = headers
            .iter()
            .position(|h| h == *col)
            .ok_or_else(|| Error::MissingColumn((*col).to_string()))?;
        index.insert((*col).to_string(), pos);
    }
    let mut rows = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let cells = index
            .iter()
            .map(|(name, &pos)| (name.clone(), rec.get(pos).unwrap_or("").to_string()))
            .collect();
        rows.push((row, cells));
    }
    Ok(rows)
}

fn cell_string(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

fn read_jsonl_rows(path: &Path, wanted: &[&str]) -> Result<Vec<RawRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut row = 0;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, Value> =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
                row,
                reason: e.to_string(),
            })?;
        let mut cells = BTreeMap::new();
        for col in wanted {
            match obj.get(*col) {
                Some(v) => {
                    cells.insert((*col).to_string(), cell_string(v));
                }
                None if row == 0 => return Err(Error::MissingColumn((*col).to_string())),
                None => {
                    return Err(Error::MalformedRow {
                        row,
                        reason: format!("missing field `{col}`"),
                    })
                }
            }
        }
        rows.push((row, cells));
        row += 1;
    }
    Ok(rows)
}

/// Reads a raw dataset file into unified records, one per raw row.
///
/// Rows with missing text are dropped and counted in the log.
pub fn ingest_dataset(
    descriptor: &DatasetDescriptor,
    raw_path: &Path,
) -> Result<Vec<UnifiedRecord>> {
    descriptor.validate()?;
    let map = &descriptor.column_map;
    let mut wanted: Vec<&str> = vec![map.text.as_str()];
    if let Some(id) = &map.id {
        wanted.push(id);
    }
    if descriptor.has_official_splits {
        match &map.split {
            Some(s) => wanted.push(s),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "`{}` declares official splits but maps no split column",
                    descriptor.name
                )))
            }
        }
    }
    wanted.extend(map.labels.iter().map(|l| l.column.as_str()));
    wanted.extend(map.meta.iter().map(String::as_str));
    wanted.sort_unstable();
    wanted.dedup();

    let rows = match descriptor.input_format {
        InputFormat::Csv => read_delimited(raw_path, b',', &wanted)?,
        InputFormat::Tsv => read_delimited(raw_path, b'\t', &wanted)?,
        InputFormat::Jsonl => read_jsonl_rows(raw_path, &wanted)?,
    };

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    let mut dropped = 0usize;
    for (row, cells) in rows {
        let text = cells[&map.text].clone();
        if text.trim().is_empty() {
            dropped += 1;
            continue;
        }
        let id = match &map.id {
            Some(col) => cells[col].trim().to_string(),
            None => row.to_string(),
        };
        if id.is_empty() || !seen.insert(id.clone()) {
            return Err(Error::MalformedRow {
                row,
                reason: format!("missing or duplicate id `{id}`"),
            });
        }
        let mut labels = BTreeMap::new();
        for l in &map.labels {
            labels.insert(l.name.clone(), l.binarize(row, &cells[&l.column])?);
        }
        let split = if descriptor.has_official_splits {
            let col = map.split.as_ref().expect("checked above");
            Some(
                Split::parse(&cells[col]).ok_or_else(|| Error::MalformedRow {
                    row,
                    reason: format!("unknown split `{}`", cells[col]),
                })?,
            )
        } else {
            None
        };
        let meta = map
            .meta
            .iter()
            .map(|c| (c.clone(), cells[c].clone()))
            .collect();
        records.push(UnifiedRecord {
            id,
            text,
            labels,
            split,
            dataset: descriptor.name.clone(),
            meta,
        });
    }
    if dropped > 0 {
        warn!(
            "{}: dropped {dropped} rows with missing text",
            descriptor.name
        );
    }
    info!("{}: ingested {} records", descriptor.name, records.len());
    Ok(records)
}

pub fn write_records(path: &Path, records: &[UnifiedRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Reads a unified record file, checking that every label is 0 or 1.
pub fn read_records(path: &Path) -> Result<Vec<UnifiedRecord>> {
    let records: Vec<UnifiedRecord> = read_jsonl(path)?;
    for (row, r) in records.iter().enumerate() {
        for (label, &v) in &r.labels {
            if v > 1 {
                return Err(Error::UnmappableLabelValue {
                    row,
                    label: label.clone(),
                    value: v.to_string(),
                });
            }
        }
    }
    Ok(records)
}
