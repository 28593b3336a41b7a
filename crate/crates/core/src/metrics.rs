//! Evaluation records and their on-disk formats.
//!
//! Two equivalent encodings are written per replica:
//!
//! * `metrics_run<r>.csv`: header row then one line per record, columns in
//!   this fixed order:
//!
//!   | column           | meaning                                            |
//!   |------------------|----------------------------------------------------|
//!   | `sim_time`       | simulated seconds of the evaluation tick           |
//!   | `task_id`        | task identifier from the config                    |
//!   | `round`          | server rounds (aggregations) completed so far      |
//!   | `loss`           | mean per-sample loss on the task's evaluation set  |
//!   | `accuracy`       | fraction correct, or `1/(1+loss)` for quadratics   |
//!   | `R_m`            | active-request target (sync: clients allocated)    |
//!   | `b_m`            | buffer size (sync: updates aggregated per round)   |
//!   | `staleness_mean` | mean staleness of updates received so far          |
//!   | `staleness_max`  | max staleness of updates received so far           |
//!   | `c`              | total updates received across all tasks            |
//!   | `dropped_count`  | updates dropped for exceeding the staleness bound  |
//!
//! * `metrics_run<r>.jsonl`: the same records, one JSON object per line with
//!   the same keys.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub sim_time: f64,
    pub task_id: usize,
    pub round: u64,
    pub loss: f64,
    pub accuracy: f64,
    #[serde(rename = "R_m")]
    pub r: usize,
    #[serde(rename = "b_m")]
    pub b: usize,
    pub staleness_mean: f64,
    pub staleness_max: u64,
    pub c: u64,
    pub dropped_count: u64,
}

pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// First `sim_time` at which `task_id` satisfies `reached(loss, accuracy)`.
pub fn first_crossing(records: &[MetricsRecord], task_id: usize, reached: impl Fn(f64, f64) -> bool) -> Option<f64> {
    records
        .iter()
        .filter(|r| r.task_id == task_id)
        .find(|r| reached(r.loss, r.accuracy))
        .map(|r| r.sim_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, loss: f64) -> MetricsRecord {
        MetricsRecord {
            sim_time: t,
            task_id: 1,
            round: 3,
            loss,
            accuracy: 0.25,
            r: 10,
            b: 2,
            staleness_mean: 1.5,
            staleness_max: 4,
            c: 17,
            dropped_count: 0,
        }
    }

    #[test]
    fn csv_header_order_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_csv(&p, &[rec(0.0, 1.0)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "sim_time,task_id,round,loss,accuracy,R_m,b_m,staleness_mean,staleness_max,c,dropped_count"
        );
    }

    #[test]
    fn both_formats_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![rec(0.0, 1.0), rec(0.5, 0.1 + 0.2)];
        write_csv(&dir.path().join("m.csv"), &records).unwrap();
        write_jsonl(&dir.path().join("m.jsonl"), &records).unwrap();
        assert_eq!(read_csv(&dir.path().join("m.csv")).unwrap(), records);
        assert_eq!(read_jsonl(&dir.path().join("m.jsonl")).unwrap(), records);
    }

    #[test]
    fn crossing_scan() {
        let records = vec![rec(0.0, 1.0), rec(1.0, 0.4), rec(2.0, 0.2)];
        assert_eq!(first_crossing(&records, 1, |l, _| l <= 0.5), Some(1.0));
        assert_eq!(first_crossing(&records, 1, |l, _| l <= 0.1), None);
    }
}
