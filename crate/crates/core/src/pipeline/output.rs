//! Tab-separated artifacts. Floats are written with 17 significant digits.

use std::io::{Read, Write};

use chrono::NaiveDate;

use crate::detector::Method;
use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::pipeline::online::{DetectionEntry, DetectionLog};

/// Round-trip exact decimal form of `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const LOG_HEADER: [&str; 9] = [
    "stream_id",
    "day_index",
    "calendar_date",
    "method",
    "statistic",
    "p_value",
    "db",
    "T_at_test",
    "run_start",
];

fn tsv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(b'\t').from_writer(w)
}

/// One row per detection across `logs`.
pub fn write_detection_logs<W: Write>(w: W, logs: &[DetectionLog]) -> Result<()> {
    let mut out = tsv_writer(w);
    out.write_record(LOG_HEADER)?;
    for log in logs {
        for e in &log.entries {
            out.write_record([
                log.stream_id.clone(),
                e.label.to_string(),
                e.date.map(|d| d.to_string()).unwrap_or_default(),
                e.method.to_string(),
                fmt_f64(e.statistic),
                fmt_f64(e.p_value),
                e.db.to_string(),
                e.t_at_test.to_string(),
                e.run_start.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, c: usize, line: usize) -> Result<T> {
    rec.get(c)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            column: c + 1,
            message: format!("bad '{}' field", LOG_HEADER[c]),
        })
}

/// Detection entries grouped by stream, in file order. The file stores
/// labels, not positions, so each entry's `day` is set to its label.
pub fn read_detection_logs<R: Read>(r: R) -> Result<Vec<DetectionLog>> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(r);
    if rdr.headers()?.iter().collect::<Vec<_>>() != LOG_HEADER {
        return Err(Error::Format("not a detection log".into()));
    }
    let mut logs: Vec<DetectionLog> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let stream = rec[0].to_string();
        let method: Method = field(&rec, 3, line)?;
        let label: i64 = field(&rec, 1, line)?;
        let date = match &rec[2] {
            "" => None,
            s => Some(NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| Error::Parse {
                line,
                column: 3,
                message: "bad calendar_date".into(),
            })?),
        };
        let entry = DetectionEntry {
            day: label.max(1) as usize,
            label,
            date,
            method,
            statistic: field(&rec, 4, line)?,
            p_value: field(&rec, 5, line)?,
            db: field(&rec, 6, line)?,
            t_at_test: field(&rec, 7, line)?,
            run_start: field(&rec, 8, line)?,
        };
        match logs.iter_mut().find(|l| l.stream_id == stream) {
            Some(l) => l.entries.push(entry),
            None => logs.push(DetectionLog {
                stream_id: stream,
                method,
                entries: vec![entry],
                tests: 0,
                days: 0,
                phi_forced: false,
            }),
        }
    }
    Ok(logs)
}

/// Per-stream summary: tests, days, detections, φ forcing.
pub fn write_log_summary<W: Write>(w: W, logs: &[DetectionLog]) -> Result<()> {
    let mut out = tsv_writer(w);
    out.write_record(["stream_id", "method", "days", "tests", "detections", "phi_forced"])?;
    for l in logs {
        out.write_record([
            l.stream_id.clone(),
            l.method.to_string(),
            l.days.to_string(),
            l.tests.to_string(),
            l.entries.len().to_string(),
            l.phi_forced.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Day column (date when known, else label) followed by features.
pub fn write_panel<W: Write>(w: W, y: &FeatureMatrix) -> Result<()> {
    let mut out = tsv_writer(w);
    let mut header = vec![if y.origin().is_some() { "date" } else { "day" }.to_string()];
    header.extend(y.feature_names().iter().cloned());
    out.write_record(&header)?;
    for j in 0..y.t() {
        let label = y.day_index()[j];
        let mut row = vec![y.date_of_label(label).map_or(label.to_string(), |d| d.to_string())];
        for i in 0..y.p() {
            row.push(if y.observed()[(i, j)] {
                fmt_f64(y.values()[(i, j)])
            } else {
                String::new()
            });
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ingest::read_panel;
    use nalgebra::DMatrix;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 12345.678_901_234_5, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn panel_round_trip() {
        let y = FeatureMatrix::complete(DMatrix::from_fn(2, 5, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0)))
            .with_origin(NaiveDate::from_ymd_opt(2023, 12, 30).unwrap());
        let mut buf = Vec::new();
        write_panel(&mut buf, &y).unwrap();
        let back = read_panel(buf.as_slice(), b'\t').unwrap();
        assert_eq!(back.values(), y.values());
        assert_eq!(back.origin(), y.origin());
    }

    #[test]
    fn log_round_trip() {
        let log = DetectionLog {
            stream_id: "p1".into(),
            method: Method::Cusum,
            entries: vec![DetectionEntry {
                day: 12,
                label: 12,
                date: NaiveDate::from_ymd_opt(2024, 5, 2),
                method: Method::Cusum,
                statistic: 1.0 / 7.0,
                p_value: 0.004,
                db: 7,
                t_at_test: 18,
                run_start: 1,
            }],
            tests: 10,
            days: 30,
            phi_forced: false,
        };
        let mut buf = Vec::new();
        write_detection_logs(&mut buf, std::slice::from_ref(&log)).unwrap();
        let back = read_detection_logs(buf.as_slice()).unwrap();
        assert_eq!(back[0].entries, log.entries);
        assert!(read_detection_logs("a\tb\n".as_bytes()).is_err());
    }
}
