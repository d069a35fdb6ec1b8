//! Comparison tables: dimensions as rows, prediction sources as columns,
//! values as percentages with one decimal. Undefined cells print `--` and
//! cells containing imputed predictions carry a trailing `*`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dimension::Dimension;
use crate::metrics::{DimensionMetrics, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableMetric {
    Ccc,
    Pearson,
    ZeroF1,
}

impl TableMetric {
    fn pick(self, row: &DimensionMetrics) -> Option<f64> {
        match self {
            TableMetric::Ccc => Some(row.ccc),
            TableMetric::Pearson => row.pearson,
            TableMetric::ZeroF1 => row.zero_f1,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            TableMetric::Ccc => "CCC (%)",
            TableMetric::Pearson => "Pearson (%)",
            TableMetric::ZeroF1 => "Zero-match F1 (%)",
        }
    }
}

impl std::str::FromStr for TableMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ccc" => Ok(TableMetric::Ccc),
            "pearson" => Ok(TableMetric::Pearson),
            "zero-f1" | "zero_f1" | "f1" => Ok(TableMetric::ZeroF1),
            other => Err(format!("unknown metric `{other}` (ccc, pearson, zero-f1)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub dimension: Dimension,
    pub cells: Vec<Option<f64>>,
    pub imputed: Vec<bool>,
    /// Gold-zero support, when a count column is requested.
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub metric: TableMetric,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    pub count_column: bool,
}

/// One row per canonical dimension, one column per named report.
pub fn comparison_table(reports: &[(String, MetricReport)], metric: TableMetric, count_column: bool) -> ComparisonTable {
    let rows = Dimension::ALL
        .iter()
        .map(|&d| {
            let found: Vec<Option<&DimensionMetrics>> = reports.iter().map(|(_, r)| r.row(d)).collect();
            TableRow {
                dimension: d,
                cells: found.iter().map(|r| r.and_then(|r| metric.pick(r))).collect(),
                imputed: found.iter().map(|r| r.is_some_and(|r| r.imputed > 0)).collect(),
                count: found.iter().flatten().next().map(|r| r.zero_support),
            }
        })
        .collect();
    ComparisonTable {
        metric,
        columns: reports.iter().map(|(name, _)| name.clone()).collect(),
        rows,
        count_column,
    }
}

/// Percentage with one decimal, e.g. `0.9211 -> "92.1"`.
pub fn percent(value: f64) -> String {
    let s = format!("{:.1}", value * 100.0);
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

fn cell_text(value: Option<f64>, imputed: bool) -> String {
    match value {
        Some(v) if imputed => format!("{}*", percent(v)),
        Some(v) => percent(v),
        None => "--".into(),
    }
}

impl ComparisonTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["Dimension".to_string()];
        h.extend(self.columns.iter().cloned());
        if self.count_column {
            h.push("Count".into());
        }
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|row| {
                let mut line = vec![row.dimension.name().to_string()];
                line.extend(row.cells.iter().zip(&row.imputed).map(|(v, i)| cell_text(*v, *i)));
                if self.count_column {
                    line.push(row.count.map_or("--".into(), |c| c.to_string()));
                }
                line
            })
            .collect()
    }

    /// Aligned plain-text table with a rule between emotions and Valence/Arousal.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let body = self.body();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for line in &body {
            for (w, cell) in widths.iter_mut().zip(line) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let render = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[0])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        let rule = "-".repeat(total);
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.metric.title());
        let _ = writeln!(out, "{}", render(&header));
        let _ = writeln!(out, "{rule}");
        for (row, line) in self.rows.iter().zip(&body) {
            if row.dimension == Dimension::Valence {
                let _ = writeln!(out, "{rule}");
            }
            let _ = writeln!(out, "{}", render(line));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        wtr.write_record(self.header()).expect("in-memory write");
        for line in self.body() {
            wtr.write_record(line).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(d: Dimension, ccc: f64, f1: Option<f64>, imputed: usize) -> DimensionMetrics {
        DimensionMetrics {
            dimension: d,
            n: 10,
            ccc,
            pearson: None,
            zero_precision: None,
            zero_recall: None,
            zero_f1: f1,
            zero_support: 3,
            imputed,
            clamped: 0,
        }
    }

    #[test]
    fn table_shape_and_cells() {
        let full = MetricReport::from_rows(Dimension::ALL.iter().map(|d| row(*d, 1.0, Some(1.0), 0)).collect(), 10, 0.0);
        let partial = MetricReport::from_rows(vec![row(Dimension::Fear, 0.92105, None, 2)], 10, 0.0);
        let reports = vec![("A".to_string(), full), ("B".to_string(), partial)];
        let t = comparison_table(&reports, TableMetric::Ccc, false);
        assert_eq!(t.rows.len(), 10);
        assert_eq!(t.columns, vec!["A", "B"]);
        let text = t.to_text();
        assert!(text.contains("Fear        100.0  92.1*"), "{text}");
        assert!(text.contains("Anger       100.0     --"), "{text}");

        let f1 = comparison_table(&reports, TableMetric::ZeroF1, true);
        let csv = f1.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "Dimension,A,B,Count");
        assert_eq!(lines[3], "Fear,100.0,--,3");
        assert_eq!(lines.len(), 11);
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(percent(0.92105), "92.1");
        assert_eq!(percent(1.0), "100.0");
        assert_eq!(percent(-0.0001), "0.0");
        assert_eq!(percent(-0.5), "-50.0");
    }
}
