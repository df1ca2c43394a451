//! Dev-set learning curves.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("record at step {step} follows step {prev}; steps must increase")]
    StepOrder { prev: u64, step: u64 },
    #[error("record at step {step} has clock {clock} before previous {prev}")]
    ClockOrder { prev: f64, clock: f64, step: u64 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("metrics line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// One evaluation point. `train_loss` is the mean training loss since the
/// previous record and is absent for the step-0 evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub wall_clock_seconds: f64,
    pub train_loss: Option<f64>,
    pub dev_bleu: f64,
    pub dev_lang: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    records: Vec<MetricRecord>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: MetricRecord) -> Result<(), MetricsError> {
        if let Some(prev) = self.records.last() {
            if r.step <= prev.step {
                return Err(MetricsError::StepOrder { prev: prev.step, step: r.step });
            }
            if r.wall_clock_seconds < prev.wall_clock_seconds {
                return Err(MetricsError::ClockOrder {
                    prev: prev.wall_clock_seconds,
                    clock: r.wall_clock_seconds,
                    step: r.step,
                });
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn best(&self) -> Option<&MetricRecord> {
        self.records.iter().fold(None, |best: Option<&MetricRecord>, r| match best {
            Some(b) if b.dev_bleu >= r.dev_bleu => Some(b),
            _ => Some(r),
        })
    }

    /// Keeps only records up to and including `step`.
    pub fn truncate_after(&mut self, step: u64) {
        self.records.retain(|r| r.step <= step);
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&record_line(r));
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MetricsError> {
        let mut log = Self::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r = serde_json::from_str(line).map_err(|e| MetricsError::Parse { line: i + 1, source: e })?;
            log.push(r)?;
        }
        Ok(log)
    }

    pub fn read(path: &Path) -> Result<Self, MetricsError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    /// Two-column CSV of elapsed hours against dev BLEU.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("hours,dev_bleu\n");
        for r in &self.records {
            writeln!(s, "{},{}", r.wall_clock_seconds / 3600.0, r.dev_bleu).unwrap();
        }
        s
    }
}

pub(crate) fn record_line(r: &MetricRecord) -> String {
    let mut s = serde_json::to_string(r).expect("record serializes");
    s.push('\n');
    s
}

/// Appends one record to a JSON-lines file and flushes it.
pub fn append_record(path: &Path, r: &MetricRecord) -> Result<(), MetricsError> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(record_line(r).as_bytes())?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, t: f64, bleu: f64) -> MetricRecord {
        MetricRecord { step, wall_clock_seconds: t, train_loss: None, dev_bleu: bleu, dev_lang: "aze".into() }
    }

    #[test]
    fn out_of_order_records_are_rejected() {
        let mut log = MetricLog::new();
        log.push(rec(10, 5.0, 1.0)).unwrap();
        assert!(matches!(log.push(rec(10, 6.0, 1.0)), Err(MetricsError::StepOrder { .. })));
        assert!(matches!(log.push(rec(20, 4.0, 1.0)), Err(MetricsError::ClockOrder { .. })));
    }

    #[test]
    fn jsonl_roundtrip_and_csv() {
        let mut log = MetricLog::new();
        log.push(rec(0, 0.0, 0.5)).unwrap();
        log.push(MetricRecord { train_loss: Some(2.25), ..rec(100, 3600.0, 4.0) }).unwrap();
        let back = MetricLog::from_jsonl(&log.to_jsonl()).unwrap();
        assert_eq!(back, log);
        assert_eq!(log.curve_csv(), "hours,dev_bleu\n0,0.5\n1,4\n");
        assert!(log.to_jsonl().lines().next().unwrap().contains("\"train_loss\":null"));
    }
}
