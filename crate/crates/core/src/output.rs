//! CSV and JSON artifacts of a run.
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::data::Category;
use crate::error::{Error, Result};
use crate::metrics::RunSummary;
use crate::sim::RoundRecord;

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const NODES_FILE: &str = "nodes.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHART_FILE: &str = "accuracy_vs_time.svg";

pub const ROUNDS_HEADER: &str =
    "iteration,elapsed_time_s,global_accuracy,slowest_node_id,slowest_category,n_active";
pub const NODES_HEADER: &str =
    "iteration,node_id,category,weight,local_time_s,acc_before,acc_after,gain";

/// One row per round.
pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(ROUNDS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{},{}",
            r.iteration,
            r.elapsed_time,
            r.global_accuracy,
            r.slowest_node,
            r.slowest_category,
            r.active_nodes.len()
        );
    }
    out
}

/// One row per active node per round.
pub fn nodes_csv(records: &[RoundRecord]) -> String {
    let rows: usize = records.iter().map(|r| r.nodes.len()).sum();
    let mut out = String::with_capacity(80 * (rows + 1));
    out.push_str(NODES_HEADER);
    out.push('\n');
    for r in records {
        for n in &r.nodes {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.iteration,
                n.node_id,
                n.category,
                n.weight,
                n.local_time,
                n.acc_before,
                n.acc_after,
                n.gain
            );
        }
    }
    out
}

/// Replaces `path` with `bytes` through a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes `rounds.csv` and `nodes.csv` into `out_dir`.
pub fn emit_csv(records: &[RoundRecord], out_dir: &Path) -> Result<()> {
    write_atomic(&out_dir.join(ROUNDS_FILE), rounds_csv(records).as_bytes())?;
    write_atomic(&out_dir.join(NODES_FILE), nodes_csv(records).as_bytes())
}

pub fn write_summary(summary: &RunSummary, out_dir: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Usage(format!("serializing summary: {e}")))?;
    text.push('\n');
    write_atomic(&out_dir.join(SUMMARY_FILE), text.as_bytes())
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        field: "summary",
        message: e.to_string(),
    })
}

/// A row of `rounds.csv` as read back for charting.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub iteration: usize,
    pub elapsed_time: f64,
    pub global_accuracy: f64,
    pub slowest_node: usize,
    pub slowest_category: Category,
    pub n_active: usize,
}

impl From<&RoundRecord> for RoundRow {
    fn from(r: &RoundRecord) -> Self {
        RoundRow {
            iteration: r.iteration,
            elapsed_time: r.elapsed_time,
            global_accuracy: r.global_accuracy,
            slowest_node: r.slowest_node,
            slowest_category: r.slowest_category,
            n_active: r.active_nodes.len(),
        }
    }
}

pub fn parse_rounds_csv(text: &str, path: &Path) -> Result<Vec<RoundRow>> {
    let fail = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        field: "rounds csv",
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == ROUNDS_HEADER => {}
        other => {
            return Err(fail(
                1,
                format!("expected header `{ROUNDS_HEADER}`, found {other:?}"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(fail(
                lineno,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let num = |idx: usize| -> Result<f64> {
            cols[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| fail(lineno, format!("column {}: {e}", idx + 1)))
        };
        let int = |idx: usize| -> Result<usize> {
            cols[idx]
                .trim()
                .parse::<usize>()
                .map_err(|e| fail(lineno, format!("column {}: {e}", idx + 1)))
        };
        let slowest_category = cols[4]
            .trim()
            .parse::<Category>()
            .map_err(|e| fail(lineno, e))?;
        rows.push(RoundRow {
            iteration: int(0)?,
            elapsed_time: num(1)?,
            global_accuracy: num(2)?,
            slowest_node: int(3)?,
            slowest_category,
            n_active: int(5)?,
        });
    }
    Ok(rows)
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rounds_csv(&text, path)
}

/// Paths of the artifacts written by [`write_run`].
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub rounds: PathBuf,
    pub nodes: PathBuf,
    pub summary: PathBuf,
}

/// CSVs plus `summary.json`.
pub fn write_run(summary: &RunSummary, out_dir: &Path) -> Result<Artifacts> {
    emit_csv(&summary.records, out_dir)?;
    write_summary(summary, out_dir)?;
    Ok(Artifacts {
        rounds: out_dir.join(ROUNDS_FILE),
        nodes: out_dir.join(NODES_FILE),
        summary: out_dir.join(SUMMARY_FILE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{NodeRecord, RunConfig};

    fn record(iteration: usize, n: usize) -> RoundRecord {
        RoundRecord {
            iteration,
            elapsed_time: 0.25 * iteration as f64,
            global_accuracy: 0.5 + 0.01 * iteration as f64,
            slowest_node: 1,
            slowest_category: Category::Bronze,
            active_nodes: (0..n).collect(),
            nodes: (0..n)
                .map(|id| NodeRecord {
                    node_id: id,
                    category: if id == 0 {
                        Category::Gold
                    } else {
                        Category::Bronze
                    },
                    weight: 1.0 / n as f64,
                    local_time: 0.1 + 0.05 * id as f64,
                    acc_before: 0.4,
                    acc_after: 0.45,
                    gain: 0.05,
                })
                .collect(),
        }
    }

    #[test]
    fn golden_csv() {
        let records = vec![record(1, 2), record(2, 1)];
        assert_eq!(
            rounds_csv(&records),
            "iteration,elapsed_time_s,global_accuracy,slowest_node_id,slowest_category,n_active\n\
             1,0.250000,0.510000,1,bronze,2\n\
             2,0.500000,0.520000,1,bronze,1\n"
        );
        assert_eq!(
            nodes_csv(&records),
            "iteration,node_id,category,weight,local_time_s,acc_before,acc_after,gain\n\
             1,0,gold,0.500000,0.100000,0.400000,0.450000,0.050000\n\
             1,1,bronze,0.500000,0.150000,0.400000,0.450000,0.050000\n\
             2,0,gold,1.000000,0.100000,0.400000,0.450000,0.050000\n"
        );
    }

    #[test]
    fn row_counts_follow_active_nodes() {
        // 20 nodes for 5 rounds, 15 for the remaining 25
        let records: Vec<_> = (1..=30)
            .map(|i| record(i, if i <= 5 { 20 } else { 15 }))
            .collect();
        assert_eq!(rounds_csv(&records).lines().count(), 31);
        assert_eq!(nodes_csv(&records).lines().count(), 1 + 5 * 20 + 25 * 15);
        assert_eq!(nodes_csv(&records).lines().count(), 476);
        assert!(!nodes_csv(&records).contains('\r'));
    }

    #[test]
    fn empty_run_has_header_only() {
        assert_eq!(rounds_csv(&[]), format!("{ROUNDS_HEADER}\n"));
        assert_eq!(nodes_csv(&[]), format!("{NODES_HEADER}\n"));
    }

    #[test]
    fn rounds_csv_parses_back() {
        let records = vec![record(1, 3), record(2, 3)];
        let text = rounds_csv(&records);
        let rows = parse_rounds_csv(&text, Path::new("r.csv")).unwrap();
        let expected: Vec<RoundRow> = records.iter().map(RoundRow::from).collect();
        assert_eq!(rows, expected);
    }

    #[test]
    fn malformed_csv_is_format_error() {
        let p = Path::new("r.csv");
        assert!(matches!(
            parse_rounds_csv("a,b\n", p),
            Err(Error::Format { .. })
        ));
        let bad = format!("{ROUNDS_HEADER}\n1,0.1,0.5,0,platinum,3\n");
        let err = parse_rounds_csv(&bad, p).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn write_run_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/out");
        let records = vec![record(1, 2), record(2, 2), record(3, 2)];
        let summary = RunSummary::new(&RunConfig::default(), &records).unwrap();
        let artifacts = write_run(&summary, &out).unwrap();
        assert_eq!(read_summary(&artifacts.summary).unwrap(), summary);
        assert_eq!(
            fs::read_to_string(&artifacts.rounds).unwrap(),
            rounds_csv(&records)
        );
        let leftovers = fs::read_dir(&out).unwrap().count();
        assert_eq!(leftovers, 3);
    }
}
