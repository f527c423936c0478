//! File formats: one CSV or JSON-Lines table per record type, JSON for
//! reports and models, and a feature CSV with a sidecar mask CSV.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ehr::{RawDataset, ValidatedDataset};
use crate::featurize::FeatureVector;
use crate::{Error, Result};

pub const STAYS_TABLE: &str = "stays";
pub const CLINICAL_TABLE: &str = "clinical_events";
pub const MEDICATIONS_TABLE: &str = "medications";
pub const CULTURES_TABLE: &str = "cultures";
pub const DIAGNOSES_TABLE: &str = "diagnoses";

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse { path: path.to_path_buf(), message: e.to_string() }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| parse_err(path, e))).collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| parse_err(path, e))
}

/// Reads a table by extension: `.jsonl` as JSON Lines, anything else as CSV.
pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_jsonl(path),
        _ => read_csv(path),
    }
}

/// `<dir>/<table>.csv`, or `<dir>/<table>.jsonl` if only that exists.
pub fn table_path(dir: &Path, table: &str) -> Option<PathBuf> {
    ["csv", "jsonl"].iter().map(|ext| dir.join(format!("{table}.{ext}"))).find(|p| p.exists())
}

/// Reads the five input tables from a directory. Every table but the stay
/// table may be absent, meaning no records of that type.
pub fn read_dataset(dir: &Path) -> Result<RawDataset> {
    fn opt<T: DeserializeOwned>(dir: &Path, table: &str) -> Result<Vec<T>> {
        table_path(dir, table).map_or(Ok(Vec::new()), |p| read_table(&p))
    }
    let stays_path = table_path(dir, STAYS_TABLE)
        .ok_or_else(|| parse_err(dir, format!("missing {STAYS_TABLE}.csv or {STAYS_TABLE}.jsonl")))?;
    Ok(RawDataset {
        stays: read_table(&stays_path)?,
        clinical: opt(dir, CLINICAL_TABLE)?,
        medications: opt(dir, MEDICATIONS_TABLE)?,
        cultures: opt(dir, CULTURES_TABLE)?,
        diagnoses: opt(dir, DIAGNOSES_TABLE)?,
    })
}

/// Writes the five tables as CSV in canonical order.
pub fn write_dataset(dir: &Path, dataset: &ValidatedDataset) -> Result<()> {
    let raw = dataset.to_raw();
    write_csv(&dir.join(format!("{STAYS_TABLE}.csv")), &raw.stays)?;
    write_csv(&dir.join(format!("{CLINICAL_TABLE}.csv")), &raw.clinical)?;
    write_csv(&dir.join(format!("{MEDICATIONS_TABLE}.csv")), &raw.medications)?;
    write_csv(&dir.join(format!("{CULTURES_TABLE}.csv")), &raw.cultures)?;
    write_csv(&dir.join(format!("{DIAGNOSES_TABLE}.csv")), &raw.diagnoses)?;
    Ok(())
}

const FEATURE_META: [&str; 5] = ["sample_id", "stay_id", "prediction_time", "label_iri", "label_vap"];

/// Writes feature values (missing as empty cells) and a 0/1 mask sidecar.
pub fn write_features(values_path: &Path, mask_path: &Path, names: &[String], samples: &[FeatureVector]) -> Result<()> {
    let mut v = csv::Writer::from_writer(create(values_path)?);
    let mut m = csv::Writer::from_writer(create(mask_path)?);
    v.write_record(FEATURE_META.iter().copied().chain(names.iter().map(String::as_str)))?;
    m.write_record(std::iter::once("sample_id").chain(names.iter().map(String::as_str)))?;
    for s in samples {
        let mut row = vec![
            s.sample_id.clone(),
            s.stay_id.clone(),
            s.prediction_time.to_string(),
            s.label_iri.to_string(),
            s.label_vap.to_string(),
        ];
        row.extend(s.values.iter().map(|x| x.map(|x| x.to_string()).unwrap_or_default()));
        v.write_record(&row)?;
        let mut mrow = vec![s.sample_id.clone()];
        mrow.extend(s.missing_mask.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        m.write_record(&mrow)?;
    }
    v.flush()?;
    m.flush()?;
    Ok(())
}

/// Reads a feature CSV and its mask sidecar; returns feature names and samples.
pub fn read_features(values_path: &Path, mask_path: &Path) -> Result<(Vec<String>, Vec<FeatureVector>)> {
    let mut v = csv::Reader::from_path(values_path).map_err(|e| parse_err(values_path, e))?;
    let header: Vec<String> = v.headers()?.iter().map(str::to_string).collect();
    if header.len() < FEATURE_META.len() || header[..FEATURE_META.len()] != FEATURE_META {
        return Err(parse_err(values_path, "unexpected feature header"));
    }
    let names = header[FEATURE_META.len()..].to_vec();
    let mut m = csv::Reader::from_path(mask_path).map_err(|e| parse_err(mask_path, e))?;
    let mask_header: Vec<String> = m.headers()?.iter().skip(1).map(str::to_string).collect();
    if mask_header != names {
        return Err(parse_err(mask_path, "mask columns differ from feature columns"));
    }
    let mut samples = Vec::new();
    for (row, mrow) in v.records().zip(m.records()) {
        let (row, mrow) = (row?, mrow?);
        let bad = |what: &str| parse_err(values_path, format!("row {}: bad {what}", samples.len() + 1));
        if row.len() != header.len() || mrow.len() != names.len() + 1 || mrow[0] != row[0] {
            return Err(bad("shape or sample id"));
        }
        let values = row
            .iter()
            .skip(FEATURE_META.len())
            .map(|c| if c.is_empty() { Ok(None) } else { c.parse::<f64>().map(Some).map_err(|_| bad("value")) })
            .collect::<Result<Vec<_>>>()?;
        let missing_mask = mrow.iter().skip(1).map(|c| c == "1").collect();
        samples.push(FeatureVector {
            sample_id: row[0].to_string(),
            stay_id: row[1].to_string(),
            prediction_time: row[2].parse().map_err(|_| bad("prediction_time"))?,
            label_iri: row[3].parse().map_err(|_| bad("label_iri"))?,
            label_vap: row[4].parse().map_err(|_| bad("label_vap"))?,
            values,
            missing_mask,
        });
    }
    Ok((names, samples))
}
