//! Report emission: JSON, flat CSV and gnuplot decay tables.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hfwave::experiments::{ScanReport, Series};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct CsvRow<'a> {
    kind: &'a str,
    word: &'a str,
    slot: &'a str,
    lambda: f64,
    value: f64,
}

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_csv<W: io::Write>(report: &ScanReport, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["kind", "word", "slot", "lambda", "value"])?;
    for s in &report.series {
        for p in &s.points {
            w.serialize(CsvRow { kind: &s.kind, word: &s.word, slot: &s.slot, lambda: p.lambda, value: p.value })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '+' => 'p',
            '-' => 'm',
            c if c.is_ascii_alphanumeric() || c == '_' => c,
            _ => '_',
        })
        .collect()
}

pub fn gnuplot_name(stem: &str, s: &Series) -> String {
    format!("{stem}_{}_{}_{}.dat", sanitize(&s.kind), sanitize(&s.word), sanitize(&s.slot))
}

pub fn gnuplot_table(s: &Series) -> String {
    let mut out = format!("# {} {} {}\n", s.kind, s.word, s.slot);
    if let Some(f) = s.fit {
        out.push_str(&format!("# order {:.6} r2 {:.6}\n", f.order, f.r2));
    }
    out.push_str("# lambda value\n");
    for p in &s.points {
        out.push_str(&format!("{:.10e} {:.10e}\n", p.lambda, p.value));
    }
    out
}

/// Writes `<stem>.json`, `<stem>.csv` and one `.dat` table per fitted series.
pub fn emit_report(report: &ScanReport, dir: &Path, stem: &str) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_string_pretty(report).map_err(io::Error::other)?)?;
    written.push(json);
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(report, fs::File::create(&csv_path)?).map_err(io::Error::other)?;
    written.push(csv_path);
    for s in report.series.iter().filter(|s| s.fit.is_some()) {
        let p = dir.join(gnuplot_name(stem, s));
        fs::write(&p, gnuplot_table(s))?;
        written.push(p);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> io::Result<ScanReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hfwave::experiments::{order_fit, SeriesPoint};

    fn series() -> Series {
        let pts: Vec<SeriesPoint> =
            [0.1, 0.05, 0.025].iter().map(|&l| SeriesPoint { lambda: l, value: 2.0 * l }).collect();
        Series::new("ricci", "u0+u1", "residual", pts).with_order_check(Some(0.9))
    }

    #[test]
    fn empty_report_is_valid_json() {
        let dir = tempfile::tempdir().unwrap();
        let rep = ScanReport::new(7);
        emit_report(&rep, dir.path(), "empty").unwrap();
        let back = read_report(&dir.path().join("empty.json")).unwrap();
        assert!(back.series.is_empty());
        let csv = fs::read_to_string(dir.path().join("empty.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn single_series_rows_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rep = ScanReport::new(7);
        rep.series.push(series());
        let files = emit_report(&rep, dir.path(), "one").unwrap();
        assert_eq!(files.len(), 3);
        let csv = fs::read_to_string(dir.path().join("one.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "kind,word,slot,lambda,value");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("ricci,u0+u1,residual,0.1,"));
        assert_eq!(read_report(&dir.path().join("one.json")).unwrap(), rep);
        let dat = fs::read_to_string(dir.path().join("one_ricci_u0pu1_residual.dat")).unwrap();
        assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), 3);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"a": 1}));
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash(&serde_json::json!({"a": 1})));
        assert_ne!(a, config_hash(&serde_json::json!({"a": 2})));
    }

    #[test]
    fn fitted_order_survives_serialization() {
        let s = series();
        let fit = order_fit(&[(0.1, 0.2), (0.05, 0.1), (0.025, 0.05)]).unwrap();
        assert!((s.fit.unwrap().order - fit.order).abs() < 1e-12);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"order\""));
        assert!(!text.contains("clipped"));
    }
}
