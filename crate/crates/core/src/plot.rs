//! `series,x,y` plot files. Numbers are written with 17 significant digits so
//! that a load after an emit reproduces every value bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLOT_CSV_HEADER: &str = "series,x,y";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

impl PlotPoint {
    pub fn new(series: impl Into<String>, x: f64, y: f64) -> Self {
        Self {
            series: series.into(),
            x,
            y,
        }
    }
}

/// Writes the points in the order given.
pub fn write_plot_csv(points: &[PlotPoint], writer: impl Write) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Input("plot series is empty".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series", "x", "y"])?;
    for p in points {
        w.write_record([
            p.series.as_str(),
            &format!("{:.16e}", p.x),
            &format!("{:.16e}", p.y),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<plot>", e))?;
    Ok(())
}

pub fn plot_csv_string(points: &[PlotPoint]) -> Result<String> {
    let mut buf = Vec::new();
    write_plot_csv(points, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn emit_plot_csv(points: &[PlotPoint], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_plot_csv(points, file)
}

pub fn read_plot_csv(reader: impl Read) -> Result<Vec<PlotPoint>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != PLOT_CSV_HEADER {
        return Err(Error::Input(format!("expected header `{PLOT_CSV_HEADER}`")));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn load_plot_csv(path: &Path) -> Result<Vec<PlotPoint>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_plot_csv(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_series_rejected() {
        assert!(plot_csv_string(&[]).is_err());
    }

    #[test]
    fn file_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.csv");
        let pts = vec![
            PlotPoint::new("alibi", 128.0, 0.1 + 0.2),
            PlotPoint::new("a,b", 64.0, f64::MIN_POSITIVE),
            PlotPoint::new("alibi", 1e300, -1.0 / 3.0),
        ];
        emit_plot_csv(&pts, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("series,x,y\n"));
        assert_eq!(load_plot_csv(&path).unwrap(), pts);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let pts = [PlotPoint::new("s", 1.0, 1.0)];
        let err = emit_plot_csv(&pts, Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(xs in prop::collection::vec((any::<f64>(), any::<f64>()), 1..50)) {
            let pts: Vec<_> = xs
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| PlotPoint::new("s", x, y))
                .collect();
            prop_assume!(!pts.is_empty());
            let back = read_plot_csv(plot_csv_string(&pts).unwrap().as_bytes()).unwrap();
            for (a, b) in pts.iter().zip(&back) {
                prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
                prop_assert_eq!(a.y.to_bits(), b.y.to_bits());
            }
        }
    }
}
