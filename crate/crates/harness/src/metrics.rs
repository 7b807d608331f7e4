//! Per-episode evaluation records and their CSV form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run_seed: u64,
    /// Training frames consumed when the evaluated weights were taken.
    pub frame: u64,
    pub trained_task: String,
    pub eval_task: String,
    pub episode_return: f64,
    /// Mean of this task's returns so far, this one included.
    pub cumulative_avg: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    run_seed: u64,
    frame: u64,
    trained_task: String,
    eval_task: String,
    episode_return: String,
    cumulative_avg: String,
}

/// Running means of a return stream.
pub fn cumulative_average(returns: &[f64]) -> Vec<f64> {
    let mut total = 0.0;
    returns
        .iter()
        .enumerate()
        .map(|(i, r)| {
            total += r;
            total / (i + 1) as f64
        })
        .collect()
}

/// Fills `cumulative_avg` per eval task, in record order.
pub fn fill_cumulative(records: &mut [MetricsRecord]) {
    let mut sums: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for r in records {
        let (sum, count) = sums.entry(r.eval_task.clone()).or_default();
        *sum += r.episode_return;
        *count += 1;
        r.cumulative_avg = *sum / *count as f64;
    }
}

/// `%.9g`-style rendering: 9 significant digits, trailing zeros dropped.
pub fn format_sig(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-5..DIGITS).contains(&exp) {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        trim(&format!("{:.*}", (DIGITS - 1 - exp) as usize, x))
    }
}

pub fn write_records<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(Row {
            run_seed: r.run_seed,
            frame: r.frame,
            trained_task: r.trained_task.clone(),
            eval_task: r.eval_task.clone(),
            episode_return: format_sig(r.episode_return),
            cumulative_avg: format_sig(r.cumulative_avg),
        })?;
    }
    if records.is_empty() {
        w.write_record([
            "run_seed",
            "frame",
            "trained_task",
            "eval_task",
            "episode_return",
            "cumulative_avg",
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| HarnessError::Summary(format!("`{s}` is not a number")))
    };
    rdr.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok(MetricsRecord {
                run_seed: row.run_seed,
                frame: row.frame,
                episode_return: parse(&row.episode_return)?,
                cumulative_avg: parse(&row.cumulative_avg)?,
                trained_task: row.trained_task,
                eval_task: row.eval_task,
            })
        })
        .collect()
}

pub fn write_file(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_records(std::io::BufWriter::new(file), records)
}

pub fn read_file(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_records(std::io::BufReader::new(file))
}
