//! Logit/label containers, validation, and bit-exact serialization.
//!
//! A `LogitStore` is the universal input of every measure: an N x K
//! matrix of pre-softmax classifier outputs plus optional labels. Stores
//! are immutable after construction and safe to share across threads.
//!
//! On disk, the `.aev` binary format is little-endian:
//! magic `AEV1` | u32 N | u32 K | u8 label-flag | N*K f64 logits
//! (row-major) | N u32 labels when the flag is 1. The CSV form starts
//! with a `k=<K>,labels=<yes|no>` header line.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"AEV1";

/// On-disk serialization format for logit stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreFormat {
    Binary,
    Csv,
}

/// N x K matrix of classifier logits with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStore {
    n_samples: usize,
    n_classes: usize,
    logits: Vec<f64>,
    labels: Option<Vec<u32>>,
    dataset_id: String,
}

impl LogitStore {
    /// Validates and builds a store. `logits` is row-major N x K.
    pub fn new(
        n_samples: usize,
        n_classes: usize,
        logits: Vec<f64>,
        labels: Option<Vec<u32>>,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        if n_samples < 1 {
            return Err(Error::InvalidStore("n_samples must be >= 1".into()));
        }
        if n_classes < 2 {
            return Err(Error::InvalidStore("n_classes must be >= 2".into()));
        }
        if logits.len() != n_samples * n_classes {
            return Err(Error::InvalidStore(format!(
                "logit count {} does not match {} x {}",
                logits.len(),
                n_samples,
                n_classes
            )));
        }
        for (idx, v) in logits.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteLogit {
                    row: idx / n_classes,
                    col: idx % n_classes,
                });
            }
        }
        if let Some(ref ls) = labels {
            if ls.len() != n_samples {
                return Err(Error::InvalidStore(format!(
                    "label count {} does not match n_samples {}",
                    ls.len(),
                    n_samples
                )));
            }
            for (row, &l) in ls.iter().enumerate() {
                if l as usize >= n_classes {
                    return Err(Error::LabelOutOfRange {
                        row,
                        label: l as i64,
                        n_classes,
                    });
                }
            }
        }
        Ok(Self {
            n_samples,
            n_classes,
            logits,
            labels,
            dataset_id: dataset_id.into(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Logits of sample `i` (length K).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.logits.chunks_exact(self.n_classes)
    }

    /// Predicted class of sample `i`; ties break to the lowest class index.
    pub fn argmax(&self, i: usize) -> usize {
        argmax_lowest(self.row(i))
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn true_accuracy(&self) -> Result<f64> {
        let labels = self.labels.as_deref().ok_or(Error::MissingLabels)?;
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| self.argmax(i) == y as usize)
            .count();
        Ok(correct as f64 / self.n_samples as f64)
    }

    /// Returns a copy with a different dataset id.
    pub fn with_dataset_id(mut self, id: impl Into<String>) -> Self {
        self.dataset_id = id.into();
        self
    }
}

/// Index of the maximum entry; ties break to the lowest index.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// One computed measure value for one dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeasureReport {
    pub dataset_id: String,
    pub measure_name: String,
    pub value: f64,
    pub accuracy: Option<f64>,
    pub params: std::collections::BTreeMap<String, f64>,
}

impl MeasureReport {
    pub fn new(dataset_id: &str, measure_name: impl fmt::Display, value: f64) -> Self {
        Self {
            dataset_id: dataset_id.to_string(),
            measure_name: measure_name.to_string(),
            value,
            accuracy: None,
            params: Default::default(),
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".to_string())
}

/// Loads a store from disk; the dataset id is the file stem.
pub fn load_store(path: &Path, format: StoreFormat) -> Result<LogitStore> {
    match format {
        StoreFormat::Binary => load_binary(path),
        StoreFormat::Csv => load_csv(path),
    }
}

/// Writes a store; binary output is byte-exact and round-trips with
/// `load_store`.
pub fn save_store(store: &LogitStore, path: &Path, format: StoreFormat) -> Result<()> {
    match format {
        StoreFormat::Binary => save_binary(store, path),
        StoreFormat::Csv => save_csv(store, path),
    }
}

fn load_binary(path: &Path) -> Result<LogitStore> {
    let pstr = path.display().to_string();
    let mut file = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|_| Error::TruncatedPayload {
        path: pstr.clone(),
        detail: "missing magic bytes".into(),
    })?;
    if &magic != MAGIC {
        return Err(Error::MalformedHeader {
            path: pstr,
            detail: format!("bad magic {magic:02x?}, expected AEV1"),
        });
    }
    let n = read_u32(&mut file, &pstr, "N")? as usize;
    let k = read_u32(&mut file, &pstr, "K")? as usize;
    let mut flag = [0u8; 1];
    file.read_exact(&mut flag).map_err(|_| Error::TruncatedPayload {
        path: pstr.clone(),
        detail: "missing label flag".into(),
    })?;
    if flag[0] > 1 {
        return Err(Error::MalformedHeader {
            path: pstr,
            detail: format!("label flag must be 0 or 1, got {}", flag[0]),
        });
    }
    let mut logits = Vec::with_capacity(n * k);
    let mut buf8 = [0u8; 8];
    for i in 0..n * k {
        file.read_exact(&mut buf8).map_err(|_| Error::TruncatedPayload {
            path: pstr.clone(),
            detail: format!("logit {} of {} missing", i, n * k),
        })?;
        logits.push(f64::from_le_bytes(buf8));
    }
    let labels = if flag[0] == 1 {
        let mut ls = Vec::with_capacity(n);
        let mut buf4 = [0u8; 4];
        for i in 0..n {
            file.read_exact(&mut buf4).map_err(|_| Error::TruncatedPayload {
                path: pstr.clone(),
                detail: format!("label {i} of {n} missing"),
            })?;
            ls.push(u32::from_le_bytes(buf4));
        }
        Some(ls)
    } else {
        None
    };
    LogitStore::new(n, k, logits, labels, file_stem(path))
}

fn read_u32(r: &mut impl Read, path: &str, field: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::TruncatedPayload {
        path: path.to_string(),
        detail: format!("missing header field {field}"),
    })?;
    Ok(u32::from_le_bytes(buf))
}

fn save_binary(store: &LogitStore, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(store.n_samples as u32).to_le_bytes())?;
    out.write_all(&(store.n_classes as u32).to_le_bytes())?;
    out.write_all(&[store.labels.is_some() as u8])?;
    for v in &store.logits {
        out.write_all(&v.to_le_bytes())?;
    }
    if let Some(ref ls) = store.labels {
        for l in ls {
            out.write_all(&l.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn load_csv(path: &Path) -> Result<LogitStore> {
    let pstr = path.display().to_string();
    let file = BufReader::new(File::open(path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader {
            path: pstr.clone(),
            detail: "empty file".into(),
        })??;
    let (k, has_labels) = parse_csv_header(&header, &pstr)?;

    let mut logits = Vec::new();
    let mut labels = if has_labels { Some(Vec::new()) } else { None };
    let mut n = 0usize;
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = k + has_labels as usize;
        if fields.len() != expected {
            return Err(Error::MalformedRecord {
                row,
                detail: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        for (col, f) in fields[..k].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::MalformedRecord {
                row,
                detail: format!("unparseable logit '{f}' in col {col}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLogit { row, col });
            }
            logits.push(v);
        }
        if let Some(ref mut ls) = labels {
            let raw = fields[k].trim();
            let l: i64 = raw.parse().map_err(|_| Error::MalformedRecord {
                row,
                detail: format!("unparseable label '{raw}'"),
            })?;
            if l < 0 || l as usize >= k {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: l,
                    n_classes: k,
                });
            }
            ls.push(l as u32);
        }
        n += 1;
    }
    LogitStore::new(n, k, logits, labels, file_stem(path))
}

fn parse_csv_header(header: &str, path: &str) -> Result<(usize, bool)> {
    let bad = |detail: String| Error::MalformedHeader {
        path: path.to_string(),
        detail,
    };
    let mut k = None;
    let mut labels = None;
    for part in header.split(',') {
        match part.trim().split_once('=') {
            Some(("k", v)) => {
                k = Some(v.parse::<usize>().map_err(|_| bad(format!("bad k value '{v}'")))?)
            }
            Some(("labels", "yes")) => labels = Some(true),
            Some(("labels", "no")) => labels = Some(false),
            _ => return Err(bad(format!("unrecognized header field '{part}'"))),
        }
    }
    match (k, labels) {
        (Some(k), Some(l)) => Ok((k, l)),
        _ => Err(bad("header must declare k=<K>,labels=<yes|no>".into())),
    }
}

fn save_csv(store: &LogitStore, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let has_labels = store.labels.is_some();
    writeln!(
        out,
        "k={},labels={}",
        store.n_classes,
        if has_labels { "yes" } else { "no" }
    )?;
    for i in 0..store.n_samples {
        let fields: Vec<String> = store.row(i).iter().map(|v| format_f64(*v)).collect();
        if let Some(ref ls) = store.labels {
            writeln!(out, "{},{}", fields.join(","), ls[i])?;
        } else {
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Shortest decimal that round-trips through f64 parsing.
pub fn format_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn store(logits: &[&[f64]], labels: Option<&[u32]>) -> LogitStore {
        let k = logits[0].len();
        let flat: Vec<f64> = logits.iter().flat_map(|r| r.iter().copied()).collect();
        LogitStore::new(logits.len(), k, flat, labels.map(|l| l.to_vec()), "t").unwrap()
    }

    #[test]
    fn accuracy_all_correct() {
        let s = store(&[&[2.0, 0.0], &[0.0, 2.0]], Some(&[0, 1]));
        assert_eq!(s.true_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn accuracy_all_wrong() {
        let s = store(&[&[2.0, 0.0], &[0.0, 2.0]], Some(&[1, 0]));
        assert_eq!(s.true_accuracy().unwrap(), 0.0);
    }

    #[test]
    fn accuracy_tie_breaks_low() {
        let s = store(&[&[1.0, 1.0]], Some(&[0]));
        assert_eq!(s.true_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn accuracy_needs_labels() {
        let s = store(&[&[1.0, 0.0]], None);
        assert!(matches!(s.true_accuracy(), Err(Error::MissingLabels)));
    }

    #[test]
    fn rejects_nan() {
        let err = LogitStore::new(2, 2, vec![0.0, 1.0, f64::NAN, 2.0], None, "t").unwrap_err();
        assert!(matches!(err, Error::NonFiniteLogit { row: 1, col: 0 }));
    }

    #[test]
    fn rejects_label_out_of_range() {
        let err = LogitStore::new(1, 2, vec![0.0, 1.0], Some(vec![2]), "t").unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { row: 0, label: 2, .. }));
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(LogitStore::new(0, 2, vec![], None, "t").is_err());
        assert!(LogitStore::new(1, 1, vec![0.0], None, "t").is_err());
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.aev");
        let s = store(&[&[0.0, 0.0], &[1.0, 2.0]], Some(&[0, 1]));
        save_store(&s, &path, StoreFormat::Binary).unwrap();
        let loaded = load_store(&path, StoreFormat::Binary).unwrap();
        assert_eq!(s, loaded);
    }

    #[test]
    fn binary_no_labels_has_flag_zero() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.aev");
        let s = store(&[&[0.5, -0.5]], None);
        save_store(&s, &path, StoreFormat::Binary).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"AEV1");
        assert_eq!(bytes[12], 0); // label flag
        assert_eq!(bytes.len(), 4 + 4 + 4 + 1 + 2 * 8);
        let loaded = load_store(&path, StoreFormat::Binary).unwrap();
        assert_eq!(s, loaded);
    }

    #[test]
    fn binary_truncated_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.aev");
        let s = store(&[&[0.0, 0.0], &[1.0, 2.0]], Some(&[0, 1]));
        save_store(&s, &path, StoreFormat::Binary).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_store(&path, StoreFormat::Binary),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn binary_bad_magic_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.aev");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x02\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            load_store(&path, StoreFormat::Binary),
            Err(Error::MalformedHeader { .. })
        ));
    }

    #[test]
    fn csv_round_trip_with_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(
            &path,
            "k=3,labels=yes\n1.0,2.0,3.0,0\n0.5,0.25,0.125,2\n-1.0,0.0,1.0,1\n2.0,2.0,2.0,0\n",
        )
        .unwrap();
        let s = load_store(&path, StoreFormat::Csv).unwrap();
        assert_eq!(s.n_samples(), 4);
        assert_eq!(s.n_classes(), 3);
        assert_eq!(s.labels().unwrap(), &[0, 2, 1, 0]);

        let out = dir.path().join("t2.csv");
        save_store(&s, &out, StoreFormat::Csv).unwrap();
        let reloaded = load_store(&out, StoreFormat::Csv).unwrap();
        assert_eq!(reloaded.with_dataset_id("t"), s);
    }

    #[test]
    fn csv_rejects_nan_text() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "k=2,labels=no\nNaN,1.0\n").unwrap();
        assert!(matches!(
            load_store(&path, StoreFormat::Csv),
            Err(Error::NonFiniteLogit { row: 0, col: 0 })
        ));
    }

    #[test]
    fn single_row_store_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.aev");
        let s = store(&[&[1.5, -2.5]], Some(&[1]));
        save_store(&s, &path, StoreFormat::Binary).unwrap();
        let loaded = load_store(&path, StoreFormat::Binary).unwrap();
        assert_eq!(loaded.with_dataset_id("t"), s);
    }
}
