//! Aggregation of per-seed metrics into mean and standard-deviation curves.
//!
//! Standard deviations are population values (divide by the number of runs).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::metrics::{format_sig, read_file, MetricsRecord};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FINAL_TABLE_FILE: &str = "final_table.csv";
const STD_NOTE: &str = "# std columns are population standard deviations across runs (divide by N)";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub eval_task: String,
    pub frame: u64,
    pub trained_task: String,
    pub runs: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub cumulative_mean: f64,
    pub cumulative_std: f64,
}

/// Final cumulative performance of one task across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalEntry {
    pub task: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub finals: Vec<FinalEntry>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
struct Point {
    trained_task: String,
    mean_return: f64,
    cumulative: f64,
}

/// Per run: (eval task, frame) -> mean return over that point's episodes and
/// the cumulative average after its last episode.
fn points(run: &[MetricsRecord]) -> BTreeMap<(String, u64), Point> {
    let mut acc: BTreeMap<(String, u64), (Point, usize)> = BTreeMap::new();
    for r in run {
        let (p, count) = acc.entry((r.eval_task.clone(), r.frame)).or_insert_with(|| {
            (
                Point {
                    trained_task: r.trained_task.clone(),
                    mean_return: 0.0,
                    cumulative: 0.0,
                },
                0,
            )
        });
        p.mean_return += r.episode_return;
        p.cumulative = r.cumulative_avg;
        *count += 1;
    }
    acc.into_iter()
        .map(|(k, (mut p, count))| {
            p.mean_return /= count as f64;
            (k, p)
        })
        .collect()
}

/// Aggregates runs that share a frame grid.
pub fn summarize(runs: &[Vec<MetricsRecord>]) -> Result<Summary> {
    if runs.is_empty() {
        return Err(HarnessError::Summary("no runs to summarize".into()));
    }
    let grids: Vec<_> = runs.iter().map(|r| points(r)).collect();
    let keys: Vec<&(String, u64)> = grids[0].keys().collect();
    if keys.is_empty() {
        return Err(HarnessError::Summary("run has no evaluation records".into()));
    }
    for (i, g) in grids.iter().enumerate().skip(1) {
        if g.len() != keys.len() || !g.keys().zip(&keys).all(|(a, b)| a == *b) {
            return Err(HarnessError::Summary(format!(
                "run {i} evaluates on a different (task, frame) grid than run 0"
            )));
        }
    }
    let mut rows = Vec::with_capacity(keys.len());
    for key in keys {
        let returns: Vec<f64> = grids.iter().map(|g| g[key].mean_return).collect();
        let cumulative: Vec<f64> = grids.iter().map(|g| g[key].cumulative).collect();
        let (return_mean, return_std) = mean_std(&returns);
        let (cumulative_mean, cumulative_std) = mean_std(&cumulative);
        rows.push(SummaryRow {
            eval_task: key.0.clone(),
            frame: key.1,
            trained_task: grids[0][key].trained_task.clone(),
            runs: runs.len(),
            return_mean,
            return_std,
            cumulative_mean,
            cumulative_std,
        });
    }
    // rows are sorted by (task, frame): the last row of each task is its final point
    let mut finals: Vec<FinalEntry> = Vec::new();
    for r in &rows {
        let entry = FinalEntry {
            task: r.eval_task.clone(),
            mean: r.cumulative_mean,
            std: r.cumulative_std,
        };
        match finals.last_mut() {
            Some(last) if last.task == r.eval_task => *last = entry,
            _ => finals.push(entry),
        }
    }
    Ok(Summary { rows, finals })
}

pub fn write_summary<W: Write>(mut out: W, summary: &Summary) -> Result<()> {
    writeln!(out, "{STD_NOTE}").map_err(csv::Error::from)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "eval_task",
        "frame",
        "trained_task",
        "runs",
        "return_mean",
        "return_std",
        "cumulative_mean",
        "cumulative_std",
    ])?;
    for r in &summary.rows {
        w.write_record([
            r.eval_task.clone(),
            r.frame.to_string(),
            r.trained_task.clone(),
            r.runs.to_string(),
            format_sig(r.return_mean),
            format_sig(r.return_std),
            format_sig(r.cumulative_mean),
            format_sig(r.cumulative_std),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Wide final-cumulative table, one row per configuration.
pub fn write_final_table<W: Write>(mut out: W, rows: &[(String, Vec<FinalEntry>)]) -> Result<()> {
    let mut tasks: Vec<String> = Vec::new();
    for (_, entries) in rows {
        for e in entries {
            if !tasks.contains(&e.task) {
                tasks.push(e.task.clone());
            }
        }
    }
    tasks.sort();
    writeln!(out, "{STD_NOTE}").map_err(csv::Error::from)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["config".to_string()];
    for t in &tasks {
        header.push(t.clone());
        header.push(format!("{t}_std"));
    }
    w.write_record(&header)?;
    for (config, entries) in rows {
        let mut record = vec![config.clone()];
        for t in &tasks {
            match entries.iter().find(|e| &e.task == t) {
                Some(e) => {
                    record.push(format_sig(e.mean));
                    record.push(format_sig(e.std));
                }
                None => record.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub(crate) fn metrics_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if path.is_file() && name.starts_with("metrics_") && name.ends_with(".csv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Name recorded in `config_resolved.txt`, else the directory name.
fn config_name(dir: &Path) -> String {
    let resolved = std::fs::read_to_string(dir.join(crate::experiment::RESOLVED_FILE)).unwrap_or_default();
    resolved
        .lines()
        .find_map(|l| l.strip_prefix("name = "))
        .map(|v| v.trim().trim_matches('"').to_string())
        .unwrap_or_else(|| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into())
        })
}

fn write_to(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Summarizes the metrics files directly in `dir`, writing `summary.csv` and
/// `final_table.csv` next to them.
pub fn summarize_run_dir(dir: &Path) -> Result<(String, Summary)> {
    let files = metrics_files(dir)?;
    if files.is_empty() {
        return Err(HarnessError::Summary(format!(
            "no metrics_*.csv files in {}",
            dir.display()
        )));
    }
    let runs = files.iter().map(|f| read_file(f)).collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs)?;
    let name = config_name(dir);
    write_summary_files(dir, &name, &summary)?;
    Ok((name, summary))
}

/// Writes `summary.csv` and a single-row `final_table.csv` into `dir`.
pub fn write_summary_files(dir: &Path, name: &str, summary: &Summary) -> Result<()> {
    write_to(&dir.join(SUMMARY_FILE), |w| write_summary(w, summary))?;
    write_to(&dir.join(FINAL_TABLE_FILE), |w| {
        write_final_table(w, &[(name.to_string(), summary.finals.clone())])
    })
}

/// Summarizes `dir` itself when it holds metrics files, otherwise each
/// subdirectory that does, plus a combined `final_table.csv` in `dir`.
pub fn summarize_tree(dir: &Path) -> Result<Vec<(String, Summary)>> {
    if !metrics_files(dir)?.is_empty() {
        return Ok(vec![summarize_run_dir(dir)?]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut out = Vec::new();
    for sub in subdirs {
        if !metrics_files(&sub)?.is_empty() {
            out.push(summarize_run_dir(&sub)?);
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Summary(format!(
            "no metrics found under {}",
            dir.display()
        )));
    }
    let table: Vec<(String, Vec<FinalEntry>)> = out.iter().map(|(n, s)| (n.clone(), s.finals.clone())).collect();
    write_to(&dir.join(FINAL_TABLE_FILE), |w| write_final_table(w, &table))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seed: u64, frame: u64, task: &str, ret: f64) -> MetricsRecord {
        MetricsRecord {
            run_seed: seed,
            frame,
            trained_task: "T1".into(),
            eval_task: task.into(),
            episode_return: ret,
            cumulative_avg: ret,
        }
    }

    #[test]
    fn single_run_has_zero_std() {
        let run = vec![record(1, 500, "T1", 0.3), record(1, 1000, "T1", 0.7)];
        let s = summarize(&[run]).unwrap();
        assert!(s.rows.iter().all(|r| r.return_std == 0.0 && r.cumulative_std == 0.0));
    }

    #[test]
    fn population_std() {
        let a = vec![record(1, 500, "T1", 1.0), record(1, 1000, "T1", 1.0)];
        let b = vec![record(2, 500, "T1", 3.0), record(2, 1000, "T1", 3.0)];
        let s = summarize(&[a, b]).unwrap();
        for r in &s.rows {
            assert_eq!((r.return_mean, r.return_std), (2.0, 1.0));
        }
        assert_eq!(
            s.finals,
            vec![FinalEntry {
                task: "T1".into(),
                mean: 2.0,
                std: 1.0
            }]
        );
    }

    #[test]
    fn misaligned_grids_rejected() {
        let a = vec![record(1, 500, "T1", 1.0)];
        let b = vec![record(2, 600, "T1", 1.0)];
        assert!(summarize(&[a, b]).is_err());
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn final_table_layout() {
        let mut buf = Vec::new();
        let rows = vec![(
            "clear".to_string(),
            vec![
                FinalEntry {
                    task: "T2".into(),
                    mean: 0.5,
                    std: 0.1,
                },
                FinalEntry {
                    task: "T1".into(),
                    mean: 0.25,
                    std: 0.0,
                },
            ],
        )];
        write_final_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1], "config,T1,T1_std,T2,T2_std");
        assert_eq!(lines[2], "clear,0.25,0,0.5,0.1");
    }
}
