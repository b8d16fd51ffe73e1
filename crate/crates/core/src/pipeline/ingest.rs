//! Delimited daily-feature files.
//!
//! The header is a day column followed by feature names. Day keys are
//! either ISO dates or integer labels, consistently. Empty and `NA` cells
//! are missing. Days absent from the file become fully missing columns.

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DayKey {
    Date(NaiveDate),
    Label(i64),
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

/// Tab for `.tsv`/`.tab`; otherwise tab if the first line has one, else comma.
pub fn sniff_delimiter(path: &Path, first_line: &str) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        Some("csv") => b',',
        _ if first_line.contains('\t') => b'\t',
        _ => b',',
    }
}

pub fn ingest(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let delim = sniff_delimiter(path, text.lines().next().unwrap_or(""));
    read_panel(text.as_bytes(), delim)
}

pub fn read_panel<R: Read>(reader: R, delimiter: u8) -> Result<FeatureMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Format("header needs a day column and at least one feature".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let p = names.len();

    let mut rows: Vec<(DayKey, Vec<Option<f64>>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |pos| pos.line() as usize);
        if rec.len() != p + 1 {
            return Err(Error::Parse {
                line,
                column: rec.len().min(p + 1),
                message: format!("expected {} fields, found {}", p + 1, rec.len()),
            });
        }
        let key_text = &rec[0];
        let key = if let Ok(d) = NaiveDate::parse_from_str(key_text, "%Y-%m-%d") {
            DayKey::Date(d)
        } else if let Ok(l) = key_text.parse::<i64>() {
            DayKey::Label(l)
        } else {
            return Err(Error::Parse {
                line,
                column: 1,
                message: format!("day '{key_text}' is neither a YYYY-MM-DD date nor an integer"),
            });
        };
        let mut cells = Vec::with_capacity(p);
        for (c, cell) in rec.iter().enumerate().skip(1) {
            if is_missing(cell) {
                cells.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => cells.push(Some(v)),
                _ => {
                    return Err(Error::Parse {
                        line,
                        column: c + 1,
                        message: format!("feature '{}': cannot parse '{cell}' as a number", names[c - 1]),
                    })
                }
            }
        }
        if let Some((prev, _)) = rows.last() {
            let order = match (prev, &key) {
                (DayKey::Date(a), DayKey::Date(b)) => b.cmp(a),
                (DayKey::Label(a), DayKey::Label(b)) => b.cmp(a),
                _ => {
                    return Err(Error::Parse {
                        line,
                        column: 1,
                        message: "day column mixes dates and integer labels".into(),
                    })
                }
            };
            if order == std::cmp::Ordering::Equal {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    message: format!("duplicate day '{key_text}'"),
                });
            }
            if order == std::cmp::Ordering::Less {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    message: format!("day '{key_text}' is earlier than the previous row"),
                });
            }
        }
        rows.push((key, cells));
    }
    if rows.is_empty() {
        return Err(Error::Format("file has no data rows".into()));
    }

    let offset = |k: &DayKey| match (k, &rows[0].0) {
        (DayKey::Date(d), DayKey::Date(d0)) => (*d - *d0).num_days(),
        (DayKey::Label(l), DayKey::Label(l0)) => l - l0,
        _ => unreachable!("day kinds checked per row"),
    };
    let t = offset(&rows.last().expect("nonempty").0) as usize + 1;
    let mut values = DMatrix::from_element(p, t, f64::NAN);
    let mut observed = DMatrix::from_element(p, t, false);
    for (key, cells) in &rows {
        let j = offset(key) as usize;
        for (i, cell) in cells.iter().enumerate() {
            if let Some(v) = cell {
                values[(i, j)] = *v;
                observed[(i, j)] = true;
            }
        }
    }
    let (first_label, origin) = match rows[0].0 {
        DayKey::Date(d) => (1, Some(d)),
        DayKey::Label(l) => (l, None),
    };
    let day_index = (0..t as i64).map(|j| first_label + j).collect();
    let y = FeatureMatrix::new(values, day_index, names, observed)?;
    Ok(match origin {
        Some(d) => y.with_origin(d),
        None => y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<FeatureMatrix> {
        read_panel(text.as_bytes(), b',')
    }

    #[test]
    fn complete_file() {
        let y = read("date,a,b\n2024-01-01,1,2\n2024-01-02,3,4\n2024-01-03,5,6\n").unwrap();
        assert_eq!((y.p(), y.t()), (2, 3));
        assert!(y.is_complete());
        assert_eq!(y.values()[(1, 2)], 6.0);
        assert_eq!(y.origin(), NaiveDate::from_ymd_opt(2024, 1, 1));
        // 2024-01-01 was a Monday.
        assert_eq!(y.weekday(0), 0);
    }

    #[test]
    fn blank_and_na_cells_are_missing() {
        let y = read("day,a,b\n1,1,\n2,NA,4\n").unwrap();
        assert!(!y.observed()[(1, 0)]);
        assert!(!y.observed()[(0, 1)]);
        assert!(y.observed()[(0, 0)]);
    }

    #[test]
    fn calendar_gap_inserts_missing_days() {
        let y = read("date,a\n2024-02-27,1\n2024-03-01,2\n").unwrap();
        // 2024 is a leap year: 28th and 29th are inserted.
        assert_eq!(y.t(), 4);
        assert!(y.day_missing(1) && y.day_missing(2));
        assert_eq!(y.day_index(), &[1, 2, 3, 4]);
    }

    #[test]
    fn malformed_cell_reports_position() {
        match read("day,a,b\n1,1,2\n2,3,x\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_and_backward_days_rejected() {
        assert!(matches!(read("day,a\n1,1\n1,2\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(read("day,a\n2,1\n1,2\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(read("day,a\n2024-01-01,1\n2,2\n"), Err(Error::Parse { .. })));
    }
}
