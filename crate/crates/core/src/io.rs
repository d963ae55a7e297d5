//! Flat-file output: trajectory CSV, report JSON and a small plot spec.

use crate::error::{Error, Result};
use crate::experiments::ExperimentReport;
use crate::sim::Trajectory;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Plain decimal text with nine significant digits, no exponent.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v == 0.0 {
            "0".into()
        } else {
            format!("{v}")
        };
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s == "-0" || s.chars().all(|c| c == '0' || c == '.' || c == '-') {
        "0".into()
    } else {
        s
    }
}

pub fn csv_header(ids: &[String]) -> String {
    let mut cols = vec!["t".to_string()];
    for id in ids {
        cols.push(format!("{id}_theta"));
        cols.push(format!("{id}_tip_x"));
        cols.push(format!("{id}_tip_y"));
    }
    cols.push("plat_x".into());
    cols.push("plat_y".into());
    cols.join(",")
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    writeln!(out, "{}", csv_header(&traj.ids))?;
    let mut row = Vec::with_capacity(3 * traj.ids.len() + 3);
    for s in &traj.samples {
        row.clear();
        row.push(format_sig(s.t));
        for (i, tip) in s.tips.iter().enumerate() {
            row.push(format_sig(s.state.theta[i]));
            row.push(format_sig(tip[0]));
            row.push(format_sig(tip[1]));
        }
        row.push(format_sig(s.state.platform_pos[0]));
        row.push(format_sig(s.state.platform_pos[1]));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trajectory(traj, &mut w)?;
    w.flush()?;
    Ok(())
}

/// A CSV file read back as named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_csv<R: BufRead>(input: R) -> Result<CsvTable> {
    let mut lines = input.lines();
    let header: Vec<String> = match lines.next() {
        Some(l) => l?.split(',').map(str::to_string).collect(),
        None => return Err(Error::Degenerate("empty CSV".into())),
    };
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| Error::Degenerate(format!("CSV row {}: {e}", n + 1)))?;
        if row.len() != header.len() {
            return Err(Error::Degenerate(format!(
                "CSV row {} has {} fields, header has {}",
                n + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

pub fn read_trajectory_csv(path: &Path) -> Result<CsvTable> {
    read_csv(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub x: String,
    pub y: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPanel {
    pub title: String,
    pub kind: String,
    pub series: Vec<PlotSeries>,
}

/// Rendering hints for external plotting tools; the data lives in the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub csv: String,
    pub panels: Vec<PlotPanel>,
}

impl PlotSpec {
    /// Tip traces over time plus a Lissajous panel for the first two
    /// metronomes and the platform orbit.
    pub fn for_trajectory(csv: &str, ids: &[String]) -> Self {
        let traces = PlotPanel {
            title: "tip coordinates".into(),
            kind: "line".into(),
            series: ids
                .iter()
                .map(|id| PlotSeries {
                    x: "t".into(),
                    y: format!("{id}_tip_x"),
                    label: id.clone(),
                })
                .collect(),
        };
        let mut panels = vec![traces];
        if ids.len() >= 2 {
            panels.push(PlotPanel {
                title: format!("{} vs {}", ids[0], ids[1]),
                kind: "scatter".into(),
                series: vec![PlotSeries {
                    x: format!("{}_theta", ids[0]),
                    y: format!("{}_theta", ids[1]),
                    label: "lissajous".into(),
                }],
            });
        }
        panels.push(PlotPanel {
            title: "platform orbit".into(),
            kind: "scatter".into(),
            series: vec![PlotSeries {
                x: "plat_x".into(),
                y: "plat_y".into(),
                label: "platform".into(),
            }],
        });
        Self {
            csv: csv.into(),
            panels,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv`, `<stem>.plot.json` and `<stem>.report.json` into
/// `dir` and records the paths in the report.
pub fn write_artifacts(report: &mut ExperimentReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    if let Some(tr) = &report.trajectory {
        let csv = dir.join(format!("{stem}.csv"));
        write_trajectory_csv(tr, &csv)?;
        let plot = dir.join(format!("{stem}.plot.json"));
        write_json(&PlotSpec::for_trajectory(&format!("{stem}.csv"), &tr.ids), &plot)?;
        paths.push(csv);
        paths.push(plot);
    }
    let json = dir.join(format!("{stem}.report.json"));
    paths.push(json.clone());
    report.artifacts.extend(paths.iter().cloned());
    write_json(report, &json)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig(1.0), "1.00000000");
        assert_eq!(format_sig(-0.0123456789123), "-0.0123456789");
        assert_eq!(format_sig(270.0), "270.000000");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1e-12), "0.00000000000100000000");
    }

    #[test]
    fn header_layout() {
        let h = csv_header(&["red".into(), "blue".into()]);
        assert_eq!(
            h,
            "t,red_theta,red_tip_x,red_tip_y,blue_theta,blue_tip_x,blue_tip_y,plat_x,plat_y"
        );
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let tr = Trajectory::empty(vec!["a".into()], 0.0, 60.0);
        let mut buf = Vec::new();
        write_trajectory(&tr, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let table = read_csv(text.as_bytes()).unwrap();
        assert!(table.rows.is_empty());
    }
}
