use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{BenchError, BenchRecord, RecordKey, RECORD_HEADER};

/// Destination of timing records that also knows what it already holds.
pub trait RecordSink {
    fn contains(&self, key: &RecordKey) -> bool;
    fn push(&mut self, record: &BenchRecord) -> Result<(), BenchError>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    records: Vec<BenchRecord>,
    keys: HashSet<RecordKey>,
}

impl MemoryStore {
    pub fn from_records(records: Vec<BenchRecord>) -> Self {
        let keys = records.iter().map(BenchRecord::key).collect();
        Self { records, keys }
    }

    pub fn records(&self) -> &[BenchRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<BenchRecord> {
        self.records
    }
}

impl RecordSink for MemoryStore {
    fn contains(&self, key: &RecordKey) -> bool {
        self.keys.contains(key)
    }

    fn push(&mut self, record: &BenchRecord) -> Result<(), BenchError> {
        if self.keys.insert(record.key()) {
            self.records.push(record.clone());
        }
        Ok(())
    }
}

/// Append-only CSV file. Each record is flushed as soon as it is measured,
/// so a crash loses at most the cell being timed.
pub struct CsvStore {
    path: PathBuf,
    writer: csv::Writer<File>,
    keys: HashSet<RecordKey>,
}

impl CsvStore {
    /// Open `path`, creating it with a header when missing and loading the
    /// keys of any records already present.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref().to_path_buf();
        let existing =
            if path.exists() && std::fs::metadata(&path)?.len() > 0 { read_records(&path)? } else { Vec::new() };
        let fresh = existing.is_empty() && !has_header(&path)?;
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh {
            writeln!(file, "{RECORD_HEADER}")?;
        }
        let writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        let keys = existing.iter().map(BenchRecord::key).collect();
        Ok(Self { path, writer, keys })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

fn has_header(path: &Path) -> Result<bool, BenchError> {
    if !path.exists() {
        return Ok(false);
    }
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    Ok(first.trim() == RECORD_HEADER)
}

impl RecordSink for CsvStore {
    fn contains(&self, key: &RecordKey) -> bool {
        self.keys.contains(key)
    }

    fn push(&mut self, record: &BenchRecord) -> Result<(), BenchError> {
        if self.keys.insert(record.key()) {
            self.writer.serialize(record)?;
            self.writer.flush()?;
        }
        Ok(())
    }
}

/// Read a record CSV. The header must match [`RECORD_HEADER`] exactly.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>, BenchError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let header: Vec<&str> = reader.headers()?.iter().collect();
    if header.join(",") != RECORD_HEADER {
        return Err(BenchError::Config(format!(
            "{}: expected header `{RECORD_HEADER}`, found `{}`",
            path.as_ref().display(),
            header.join(",")
        )));
    }
    reader.deserialize().map(|r| r.map_err(BenchError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Method;

    fn record(seed: u64) -> BenchRecord {
        BenchRecord {
            method: Method::SQ,
            n: 64,
            p: 0.2,
            seed,
            batch_size: 32,
            num_batches: 100,
            elapsed_seconds: 0.125,
            height: 9,
            lcc_size: 63,
        }
    }

    #[test]
    fn csv_round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        {
            let mut store = CsvStore::open(&path).unwrap();
            store.push(&record(0)).unwrap();
            store.push(&record(1)).unwrap();
            store.push(&record(1)).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), RECORD_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "SQ,64,0.2,0,32,100,0.125,9,63");
        let mut store = CsvStore::open(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert!(store.contains(&record(1).key()));
        store.push(&record(2)).unwrap();
        drop(store);
        let back = read_records(&path).unwrap();
        assert_eq!(back, vec![record(0), record(1), record(2)]);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "method,n\nSQ,1\n").unwrap();
        assert!(read_records(&path).is_err());
    }
}
