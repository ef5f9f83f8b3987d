//! Per-step run records, streamed to CSV as training proceeds.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One logged step. CSV columns follow field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    pub tokens: u64,
    pub flops: u64,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub n_params: u64,
}

/// An applied expansion, written to `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub step: u64,
    pub from_depth: usize,
    pub to_depth: usize,
    pub method: String,
    pub plan: String,
    pub n_before: u64,
    pub n_after: u64,
    pub batch_size: usize,
    /// Loss on the first validation batch just before and just after expanding.
    pub loss_before: f64,
    pub loss_after: f64,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
    pub events: Vec<EventRecord>,
}

impl RunLog {
    /// `(step, tokens, val_loss)` for every row carrying a validation loss.
    pub fn val_curve(&self) -> Vec<(u64, u64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.val_loss.map(|v| (r.step, r.tokens, v)))
            .collect()
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_loss)
    }

    pub fn total_flops(&self) -> u64 {
        self.records.last().map_or(0, |r| r.flops)
    }

    /// Steps at which the parameter count changed.
    pub fn expansion_steps(&self) -> Vec<u64> {
        self.records
            .windows(2)
            .filter(|w| w[0].n_params != w[1].n_params)
            .map(|w| w[1].step)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = CsvSink::create(path)?;
        for r in &self.records {
            w.push(r)?;
        }
        w.finish()
    }

    pub fn read_csv(path: &Path) -> Result<RunLog, HarnessError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let records = rdr
            .deserialize()
            .collect::<Result<Vec<RunRecord>, _>>()
            .map_err(|e| csv_err(path, e))?;
        Ok(RunLog {
            records,
            events: Vec::new(),
        })
    }

    pub fn write_events(&self, path: &Path) -> Result<(), HarnessError> {
        let mut text = String::new();
        for e in &self.events {
            text.push_str(&serde_json::to_string(e).expect("event serializes"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|source| HarnessError::io(path, source))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Data(format!("{}: {e}", path.display()))
}

/// Append-only CSV writer used during training.
pub struct CsvSink {
    path: std::path::PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(|source| HarnessError::io(path, source))?;
        Ok(CsvSink {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(BufWriter::new(file)),
        })
    }

    pub fn push(&mut self, r: &RunRecord) -> Result<(), HarnessError> {
        self.writer.serialize(r).map_err(|e| csv_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        self.writer.flush().map_err(|source| HarnessError::io(&self.path, source))?;
        let inner = self.writer.into_inner().map_err(|e| HarnessError::Data(e.to_string()))?;
        inner.into_inner().map_err(|e| HarnessError::Data(e.to_string()))?.flush().map_err(|source| HarnessError::io(&self.path, source))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, val: Option<f64>, n: u64) -> RunRecord {
        RunRecord {
            step,
            tokens: step * 10,
            flops: step * 60 * n,
            lr: 0.5,
            train_loss: Some(1.0),
            val_loss: val,
            n_params: n,
        }
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let log = RunLog {
            records: vec![rec(0, Some(2.0), 5), rec(1, None, 5), rec(2, Some(1.5), 9)],
            events: vec![],
        };
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,tokens,flops,lr,train_loss,val_loss,n_params");
        assert_eq!(RunLog::read_csv(&path).unwrap().records, log.records);
        assert_eq!(log.expansion_steps(), vec![2]);
        assert_eq!(log.final_val_loss(), Some(1.5));
        assert_eq!(log.val_curve().len(), 2);
    }
}
