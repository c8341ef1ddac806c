use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{render_plot, Series};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub algorithm: String,
    pub run: usize,
    pub round: usize,
    pub regret_cum: f64,
    pub q_cum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: String,
    pub round: usize,
    pub regret_mean: f64,
    pub regret_se: f64,
    pub q_mean: f64,
    pub q_se: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub raw: Vec<RawRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl ResultsTable {
    /// Algorithm labels in order of first appearance.
    pub fn algorithms(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for row in &self.raw {
            if !seen.contains(&row.algorithm) {
                seen.push(row.algorithm.clone());
            }
        }
        seen
    }

    /// Aggregate value at the last logged round for `algorithm`.
    pub fn final_row(&self, algorithm: &str) -> Option<&AggregateRow> {
        self.aggregate.iter().filter(|r| r.algorithm == algorithm).max_by_key(|r| r.round)
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Mean and standard error per `(algorithm, round)`, algorithms in first-seen order.
pub fn aggregate(raw: &[RawRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<((String, usize), Vec<(f64, f64)>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for row in raw {
        let key = (row.algorithm.clone(), row.round);
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push((row.regret_cum, row.q_cum));
    }
    let order: Vec<String> = ResultsTable {
        raw: raw.to_vec(),
        aggregate: Vec::new(),
    }
    .algorithms();
    groups.sort_by_key(|((alg, round), _)| (order.iter().position(|a| a == alg), *round));
    groups
        .into_iter()
        .map(|((algorithm, round), vals)| {
            let regret: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let q: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let (regret_mean, regret_se) = mean_se(&regret);
            let (q_mean, q_se) = mean_se(&q);
            AggregateRow {
                algorithm,
                round,
                regret_mean,
                regret_se,
                q_mean,
                q_se,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    }
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Vec<RawRow>> {
    read_csv(path.as_ref())
}

pub fn read_aggregate(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    read_csv(path.as_ref())
}

/// Largest absolute difference between two aggregate tables, or an error if
/// their keys differ.
pub fn aggregate_discrepancy(a: &[AggregateRow], b: &[AggregateRow]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!("aggregate tables have {} and {} rows", a.len(), b.len())));
    }
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        if x.algorithm != y.algorithm || x.round != y.round {
            return Err(Error::input(format!(
                "row mismatch: ({}, {}) vs ({}, {})",
                x.algorithm, x.round, y.algorithm, y.round
            )));
        }
        for (p, q) in [
            (x.regret_mean, y.regret_mean),
            (x.regret_se, y.regret_se),
            (x.q_mean, y.q_mean),
            (x.q_se, y.q_se),
        ] {
            worst = worst.max((p - q).abs());
        }
    }
    Ok(worst)
}

fn series(table: &[AggregateRow], algorithms: &[String], pick: fn(&AggregateRow) -> (f64, f64)) -> Vec<Series> {
    algorithms
        .iter()
        .filter_map(|alg| {
            let points: Vec<(f64, f64, f64)> = table
                .iter()
                .filter(|r| &r.algorithm == alg)
                .map(|r| {
                    let (m, se) = pick(r);
                    (r.round as f64, m, se)
                })
                .collect();
            if points.is_empty() {
                log::warn!("no aggregate rows for {alg}; omitting it from the plots");
                return None;
            }
            Some(Series {
                label: alg.clone(),
                points,
            })
        })
        .collect()
}

/// Writes the two SVG figures for an aggregate table.
pub fn write_plots(aggregate: &[AggregateRow], algorithms: &[String], outdir: &Path) -> Result<Vec<PathBuf>> {
    let figures = [
        (
            "regret.svg",
            "Cumulative regret",
            series(aggregate, algorithms, |r| (r.regret_mean, r.regret_se)),
        ),
        (
            "interpretability.svg",
            "Cumulative model uncertainty error",
            series(aggregate, algorithms, |r| (r.q_mean, r.q_se)),
        ),
    ];
    let mut written = Vec::new();
    for (file, ylabel, data) in figures {
        let path = outdir.join(file);
        fs::write(&path, render_plot(&data, "Round", ylabel)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `raw.csv`, `aggregate.csv`, `regret.svg` and `interpretability.svg`.
pub fn emit_outputs(table: &ResultsTable, outdir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let outdir = outdir.as_ref();
    if table.raw.is_empty() {
        return Err(Error::input("nothing to write: the results table is empty"));
    }
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let raw_path = outdir.join("raw.csv");
    let agg_path = outdir.join("aggregate.csv");
    write_csv(&raw_path, &table.raw)?;
    write_csv(&agg_path, &table.aggregate)?;
    let mut written = vec![raw_path, agg_path];
    written.extend(write_plots(&table.aggregate, &table.algorithms(), outdir)?);
    Ok(written)
}

/// Re-reads `raw.csv`, re-aggregates, and compares against `aggregate.csv`.
/// Returns the recomputed table and the largest discrepancy.
pub fn reaggregate_dir(dir: impl AsRef<Path>) -> Result<(ResultsTable, f64)> {
    let dir = dir.as_ref();
    let raw = read_raw(dir.join("raw.csv"))?;
    let stored = read_aggregate(dir.join("aggregate.csv"))?;
    let recomputed = aggregate(&raw);
    let gap = aggregate_discrepancy(&recomputed, &stored)?;
    Ok((
        ResultsTable {
            raw,
            aggregate: recomputed,
        },
        gap,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alg: &str, run: usize, round: usize, r: f64, q: f64) -> RawRow {
        RawRow {
            algorithm: alg.into(),
            run,
            round,
            regret_cum: r,
            q_cum: q,
        }
    }

    #[test]
    fn aggregate_mean_and_se() {
        let raw = vec![
            row("B", 0, 1, 1.0, 0.5),
            row("B", 1, 1, 3.0, 0.5),
            row("A", 0, 1, 2.0, 1.0),
        ];
        let agg = aggregate(&raw);
        assert_eq!(agg[0].algorithm, "B");
        assert_eq!(agg[0].regret_mean, 2.0);
        assert!((agg[0].regret_se - 1.0).abs() < 1e-15);
        assert_eq!(agg[0].q_se, 0.0);
        assert_eq!(agg[1].algorithm, "A");
        assert_eq!(agg[1].regret_se, 0.0);
    }

    #[test]
    fn round_trip_and_plots() {
        let dir = tempfile::tempdir().unwrap();
        let raw = vec![
            row("A", 0, 1, 0.1, 0.01),
            row("A", 1, 1, 0.3, 0.02),
            row("A", 0, 2, 0.25, 0.015),
            row("A", 1, 2, 0.7, 0.04),
            row("B", 0, 1, 1.0 / 3.0, 0.0),
            row("B", 0, 2, 2.0 / 3.0, 1e-17),
        ];
        let table = ResultsTable {
            aggregate: aggregate(&raw),
            raw,
        };
        let files = emit_outputs(&table, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let (back, gap) = reaggregate_dir(dir.path()).unwrap();
        assert!(gap <= 1e-9);
        assert_eq!(back.raw, table.raw);
        let svg = fs::read_to_string(dir.path().join("regret.svg")).unwrap();
        assert_eq!(svg.matches("class=\"series\"").count(), 2);
    }

    #[test]
    fn missing_series_is_skipped() {
        let agg = aggregate(&[row("A", 0, 1, 1.0, 1.0)]);
        let s = series(&agg, &["A".into(), "ghost".into()], |r| (r.regret_mean, r.regret_se));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn unwritable_dir_is_io_error() {
        let file = tempfile::NamedTempFile::new().unwrap();
        let table = ResultsTable {
            raw: vec![row("A", 0, 1, 1.0, 1.0)],
            aggregate: Vec::new(),
        };
        let err = emit_outputs(&table, file.path().join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
