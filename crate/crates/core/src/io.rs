//! File formats: logit tables (CSV / JSONL), signal dumps, experiment exports
//! and the run configuration.
//!
//! Logit CSV schema: `id,label?,prediction?,fold?,<metadata...>,logit_0..logit_{k-1}`.
//! Empty `label`/`prediction` cells mean "absent". Floats are written in
//! shortest round-trip form, so reading back a written table is lossless.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationKind;
use crate::error::{Error, Result};
use crate::harness::{ExperimentRecord, SensitivityBin};
use crate::pipeline::Correction;
use crate::signals::{LogitRecord, Signal, SignalMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Jsonl,
}

impl TableFormat {
    /// `.jsonl` / `.ndjson` / `.json` are JSON lines; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => TableFormat::Jsonl,
            _ => TableFormat::Csv,
        }
    }
}

/// Parsed logit file with a consistent class count.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    pub records: Vec<LogitRecord>,
    pub num_classes: usize,
}

impl LogitTable {
    pub fn is_labeled(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.label.is_some())
    }
}

const RESERVED: [&str; 4] = ["id", "label", "prediction", "fold"];

pub fn read_logit_table(path: impl AsRef<Path>) -> Result<LogitTable> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    match TableFormat::from_path(path) {
        TableFormat::Csv => parse_csv(BufReader::new(file)),
        TableFormat::Jsonl => parse_jsonl(BufReader::new(file)),
    }
}

fn parse_index(row: usize, column: &str, cell: &str) -> Result<Option<usize>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<usize>()
        .map(Some)
        .map_err(|_| Error::parse(row, column, format!("expected a class index, got '{cell}'")))
}

pub fn parse_csv<R: std::io::Read>(reader: R) -> Result<LogitTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| Error::parse(0, "id", "missing 'id' column"))?;
    let (label_col, pred_col, fold_col) = (col("label"), col("prediction"), col("fold"));

    let mut logit_cols = Vec::new();
    while let Some(c) = col(&format!("logit_{}", logit_cols.len())) {
        logit_cols.push(c);
    }
    let k = logit_cols.len();
    if k < 2 {
        return Err(Error::parse(
            0,
            "logit_*",
            format!("need logit_0..logit_{{k-1}} with k >= 2, found {k}"),
        ));
    }
    let meta_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, h)| !RESERVED.contains(h) && !logit_cols.contains(i))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if let Some((_, h)) = meta_cols.iter().find(|(_, h)| h.starts_with("logit_")) {
        return Err(Error::parse(
            0,
            h.clone(),
            "logit columns must be numbered contiguously from 0",
        ));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::parse(row_no, "*", e.to_string()))?;
        if row.len() != headers.len() {
            return Err(Error::parse(
                row_no,
                "*",
                format!("expected {} fields, found {}", headers.len(), row.len()),
            ));
        }
        let id = row[id_col].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::parse(row_no, "id", format!("duplicate id '{id}'")));
        }
        let logits = logit_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let v: f64 = row[c].parse().map_err(|_| {
                    Error::parse(
                        row_no,
                        format!("logit_{j}"),
                        format!("not a number: '{}'", &row[c]),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(
                        row_no,
                        format!("logit_{j}"),
                        "logit is not finite",
                    ));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;

        let mut rec = LogitRecord::new(id, logits);
        rec.label = label_col
            .map(|c| parse_index(row_no, "label", &row[c]))
            .transpose()?
            .flatten();
        rec.prediction = pred_col
            .map(|c| parse_index(row_no, "prediction", &row[c]))
            .transpose()?
            .flatten();
        rec.fold = fold_col
            .map(|c| row[c].to_string())
            .filter(|f| !f.is_empty());
        rec.metadata = meta_cols
            .iter()
            .map(|(c, h)| (h.clone(), row[*c].to_string()))
            .collect();
        check_record(&rec, row_no)?;
        records.push(rec);
    }
    Ok(LogitTable {
        records,
        num_classes: k,
    })
}

fn check_record(rec: &LogitRecord, row: usize) -> Result<()> {
    let k = rec.logits.len();
    if let Some(l) = rec.label.filter(|&l| l >= k) {
        return Err(Error::parse(
            row,
            "label",
            format!("label {l} out of range for {k} classes"),
        ));
    }
    if let Some(p) = rec.prediction.filter(|&p| p >= k) {
        return Err(Error::parse(
            row,
            "prediction",
            format!("prediction {p} out of range for {k} classes"),
        ));
    }
    Ok(())
}

pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<LogitTable> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut k = None;
    let mut row_no = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        row_no += 1;
        let rec: LogitRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(row_no, "*", e.to_string()))?;
        let width = rec.logits.len();
        match k {
            None if width < 2 => {
                return Err(Error::parse(
                    row_no,
                    "logits",
                    format!("need at least 2 logits, got {width}"),
                ))
            }
            None => k = Some(width),
            Some(expected) if expected != width => {
                return Err(Error::parse(
                    row_no,
                    "logits",
                    format!("expected {expected} logits, found {width}"),
                ))
            }
            Some(_) => {}
        }
        if let Some(j) = rec.logits.iter().position(|z| !z.is_finite()) {
            return Err(Error::parse(
                row_no,
                format!("logits[{j}]"),
                "logit is not finite",
            ));
        }
        if !seen.insert(rec.sample_id.clone()) {
            return Err(Error::parse(
                row_no,
                "id",
                format!("duplicate id '{}'", rec.sample_id),
            ));
        }
        check_record(&rec, row_no)?;
        records.push(rec);
    }
    let num_classes = k.ok_or_else(|| Error::parse(0, "*", "file contains no records"))?;
    Ok(LogitTable {
        records,
        num_classes,
    })
}

pub fn write_logit_table(path: impl AsRef<Path>, records: &[LogitRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = BufWriter::new(File::create(path)?);
    match TableFormat::from_path(path) {
        TableFormat::Csv => write_csv(file, records),
        TableFormat::Jsonl => write_jsonl(file, records),
    }
}

pub fn write_csv<W: Write>(writer: W, records: &[LogitRecord]) -> Result<()> {
    let k = records.first().map_or(0, |r| r.logits.len());
    if let Some(r) = records.iter().find(|r| r.logits.len() != k) {
        return Err(Error::invalid(format!(
            "record {} has {} logits, expected {k}",
            r.sample_id,
            r.logits.len()
        )));
    }
    let has_label = records.iter().any(|r| r.label.is_some());
    let has_pred = records.iter().any(|r| r.prediction.is_some());
    let has_fold = records.iter().any(|r| r.fold.is_some());
    let meta_keys: BTreeSet<&String> = records.iter().flat_map(|r| r.metadata.keys()).collect();

    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    if has_label {
        header.push("label".into());
    }
    if has_pred {
        header.push("prediction".into());
    }
    if has_fold {
        header.push("fold".into());
    }
    header.extend(meta_keys.iter().map(|k| k.to_string()));
    header.extend((0..k).map(|j| format!("logit_{j}")));
    w.write_record(&header)?;

    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let mut row = vec![r.sample_id.clone()];
        if has_label {
            row.push(opt(r.label));
        }
        if has_pred {
            row.push(opt(r.prediction));
        }
        if has_fold {
            row.push(r.fold.clone().unwrap_or_default());
        }
        row.extend(
            meta_keys
                .iter()
                .map(|k| r.metadata.get(*k).cloned().unwrap_or_default()),
        );
        row.extend(r.logits.iter().map(|z| format!("{z:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[LogitRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `id` plus the twelve signal columns.
pub fn write_signals<W: Write>(
    writer: W,
    records: &[LogitRecord],
    signals: &SignalMatrix,
) -> Result<()> {
    if records.len() != signals.len() {
        return Err(Error::invalid("records and signal rows differ in length"));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id"];
    header.extend(Signal::names());
    w.write_record(&header)?;
    for (r, row) in records.iter().zip(&signals.rows) {
        let mut out = vec![r.sample_id.clone()];
        out.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&out)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_experiments_csv<W: Write>(writer: W, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_experiments_csv<R: std::io::Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_experiments_jsonl<W: Write>(
    mut writer: W,
    records: &[ExperimentRecord],
) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_sensitivity_csv<W: Write>(writer: W, bins: &[SensitivityBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

/// Settings shared by the CLI subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub margin: f64,
    pub alpha: f64,
    pub signals: Vec<Signal>,
    pub lambda: f64,
    pub normalize: bool,
    pub calibration: CalibrationKind,
    pub correction: Correction,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            margin: 0.0,
            alpha: 0.05,
            signals: Signal::ALL.to_vec(),
            lambda: 1e-4,
            normalize: true,
            calibration: CalibrationKind::None,
            correction: Correction::None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.signals.is_empty() {
            return Err(Error::Config("signal selection is empty".into()));
        }
        if !self.margin.is_finite() {
            return Err(Error::Config("margin must be finite".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Parses a comma-separated signal list; `all` selects every signal.
pub fn parse_signal_list(spec: &str) -> Result<Vec<Signal>> {
    if spec.trim() == "all" {
        return Ok(Signal::ALL.to_vec());
    }
    let mut out: Vec<Signal> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Config("signal selection is empty".into()));
    }
    Ok(out)
}

/// Groups records by their `fold` column, in first-appearance order.
pub fn split_by_fold(records: Vec<LogitRecord>) -> Result<Vec<(String, Vec<LogitRecord>)>> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Vec<LogitRecord>> = BTreeMap::new();
    for r in records {
        let fold = r
            .fold
            .clone()
            .ok_or_else(|| Error::invalid(format!("record {} has no fold", r.sample_id)))?;
        if !groups.contains_key(&fold) {
            order.push(fold.clone());
        }
        groups.entry(fold).or_default().push(r);
    }
    Ok(order
        .into_iter()
        .map(|f| {
            let recs = groups.remove(&f).unwrap_or_default();
            (f, recs)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_single_record() {
        let t = parse_csv("id,label,logit_0,logit_1\na,1,0.0,2.0".as_bytes()).unwrap();
        assert_eq!(t.num_classes, 2);
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].label, Some(1));
        assert_eq!(t.records[0].logits, vec![0.0, 2.0]);
    }

    #[test]
    fn csv_optional_columns_and_metadata() {
        let text =
            "id,label,prediction,fold,site,logit_0,logit_1\na,,1,f1,x,0.5,1.5\nb,0,,f2,y,1,2\n";
        let t = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(t.records[0].label, None);
        assert_eq!(t.records[0].prediction, Some(1));
        assert_eq!(t.records[0].fold.as_deref(), Some("f1"));
        assert_eq!(t.records[1].metadata["site"], "y");
        assert!(!t.is_labeled());
    }

    #[test]
    fn jsonl_unlabeled() {
        let t = parse_jsonl("{\"id\":\"a\",\"logits\":[0,0]}\n".as_bytes()).unwrap();
        assert_eq!(t.records[0].label, None);
        assert_eq!(t.num_classes, 2);
    }

    #[test]
    fn csv_ragged_row() {
        let err = parse_csv("id,logit_0,logit_1\na,0,1\nb,0,1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn jsonl_inconsistent_k() {
        let text = "{\"id\":\"a\",\"logits\":[0,0]}\n{\"id\":\"b\",\"logits\":[0,0,1]}\n";
        assert!(matches!(
            parse_jsonl(text.as_bytes()),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn csv_errors_name_row_and_column() {
        let err = parse_csv("id,logit_0,logit_1\na,0,x\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "logit_1");
            }
            other => panic!("unexpected {other}"),
        }
        let err = parse_csv("id,logit_0,logit_1\na,0,1\na,1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, ref column, .. } if column == "id"));
        assert!(parse_csv("id,label,logit_0,logit_1\na,5,0,1\n".as_bytes()).is_err());
        assert!(parse_csv("id,logit_0\na,0\n".as_bytes()).is_err());
        assert!(parse_csv("id,logit_0,logit_2\na,0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn signal_list_parsing() {
        assert_eq!(parse_signal_list("all").unwrap().len(), 12);
        assert_eq!(
            parse_signal_list("energy,conf_max,energy").unwrap(),
            vec![Signal::ConfMax, Signal::Energy]
        );
        assert!(parse_signal_list("nope").is_err());
        assert!(parse_signal_list(",").is_err());
    }

    #[test]
    fn run_config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            alpha: 1.5,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            signals: vec![],
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
