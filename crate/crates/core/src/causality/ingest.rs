//! Delimited time-series ingestion.
//!
//! The first row names the columns. Exactly one column holds ISO-8601
//! timestamps (`timestamp` or `time`, else the first column); every other
//! column is a numeric series. Empty cells and `NA`/`NaN` are missing.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{CausalityError, TimeSeriesTable};

/// Longest run of missing samples filled by linear interpolation.
pub const MAX_GAP: usize = 4;
/// Series with a larger missing fraction are rejected outright.
pub const MAX_MISSING_FRACTION: f64 = 0.2;

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

fn parse_cell(s: &str) -> Result<Option<f64>, ()> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

/// Fill gaps of at most [`MAX_GAP`] samples; `None` when the series must be rejected.
pub fn fill_gaps(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let n = values.len();
    let missing = values.iter().filter(|v| v.is_none()).count();
    if n == 0 || missing as f64 > MAX_MISSING_FRACTION * n as f64 {
        return None;
    }
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        if let Some(v) = values[i] {
            out[i] = v;
            i += 1;
            continue;
        }
        let start = i;
        while i < n && values[i].is_none() {
            i += 1;
        }
        if i - start > MAX_GAP {
            return None;
        }
        let before = start.checked_sub(1).and_then(|j| values[j]);
        let after = values.get(i).copied().flatten();
        for (j, slot) in out.iter_mut().enumerate().take(i).skip(start) {
            *slot = match (before, after) {
                (Some(a), Some(b)) => {
                    let w = (j + 1 - start) as f64 / (i - start + 1) as f64;
                    a + w * (b - a)
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => return None,
            };
        }
    }
    Some(out)
}

fn check_header(header: &[String]) -> Result<(), CausalityError> {
    let bad = |index: usize, reason: &str| CausalityError::Header { index: index + 1, name: header[index].clone(), reason: reason.into() };
    for (i, name) in header.iter().enumerate() {
        if name.is_empty() {
            return Err(bad(i, "has an empty name"));
        }
        if name.parse::<f64>().is_ok() {
            return Err(bad(i, "is numeric; the first row must name the columns"));
        }
        if header[..i].contains(name) {
            return Err(bad(i, "repeats an earlier column name"));
        }
    }
    Ok(())
}

/// Parse delimited text; rejected series are listed in `rejected`.
pub fn read_time_series<R: Read>(reader: R) -> Result<TimeSeriesTable, CausalityError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(CausalityError::Ingest("need a timestamp column and at least one series".into()));
    }
    check_header(&header)?;
    let ts_col = header
        .iter()
        .position(|h| h.eq_ignore_ascii_case("timestamp") || h.eq_ignore_ascii_case("time"))
        .unwrap_or(0);
    let mut stamps = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); header.len()];
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = line + 2;
        let ts = record.get(ts_col).unwrap_or_default();
        stamps.push(
            parse_timestamp(ts)
                .ok_or_else(|| CausalityError::Ingest(format!("row {row}: bad timestamp `{ts}`")))?,
        );
        for (c, col) in columns.iter_mut().enumerate() {
            if c == ts_col {
                continue;
            }
            let cell = record.get(c).unwrap_or_default();
            col.push(parse_cell(cell).map_err(|_| {
                CausalityError::Ingest(format!("row {row}, column `{}`: not a number `{cell}`", header[c]))
            })?);
        }
    }
    if stamps.len() < 2 {
        return Err(CausalityError::Ingest("need at least two samples".into()));
    }
    let step = stamps[1] - stamps[0];
    if step.num_seconds() <= 0 {
        return Err(CausalityError::Ingest("timestamps must increase".into()));
    }
    if let Some(i) = stamps.windows(2).position(|w| w[1] - w[0] != step) {
        return Err(CausalityError::Ingest(format!(
            "irregular sampling between rows {} and {}",
            i + 2,
            i + 3
        )));
    }
    let mut variables = Vec::new();
    let mut series = Vec::new();
    let mut rejected = Vec::new();
    for (c, col) in columns.into_iter().enumerate() {
        if c == ts_col {
            continue;
        }
        match fill_gaps(&col) {
            Some(v) => {
                variables.push(header[c].clone());
                series.push(v);
            }
            None => {
                log::warn!("series `{}` rejected: too many missing values", header[c]);
                rejected.push(header[c].clone());
            }
        }
    }
    let n = stamps.len();
    let samples = (0..n).map(|t| series.iter().map(|s| s[t]).collect()).collect();
    let mut table = TimeSeriesTable::new(variables, samples, step.num_seconds() as f64 / 60.0)?;
    table.rejected = rejected;
    Ok(table)
}

/// Write `table` as delimited text with a `timestamp` column starting at `start`.
pub fn write_time_series<W: Write>(table: &TimeSeriesTable, start: NaiveDateTime, writer: W) -> Result<(), CausalityError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(table.variables.iter().cloned());
    w.write_record(&header)?;
    let step = chrono::Duration::seconds((table.sampling_interval_minutes * 60.0).round() as i64);
    let mut t = start;
    for row in &table.samples {
        let mut rec = vec![t.format("%Y-%m-%dT%H:%M:%S").to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
        t += step;
    }
    w.flush().map_err(|source| CausalityError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

pub fn load_time_series(path: &Path) -> Result<TimeSeriesTable, CausalityError> {
    let file = std::fs::File::open(path).map_err(|source| CausalityError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_time_series(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_header_names_the_column() {
        let text = "timestamp,a,,b\n2024-01-01T00:00:00,1,2,3\n2024-01-01T00:15:00,1,2,3\n";
        match read_time_series(text.as_bytes()) {
            Err(CausalityError::Header { index, .. }) => assert_eq!(index, 3),
            other => panic!("expected header error, got {other:?}"),
        }
        let dup = "timestamp,a,a\n2024-01-01T00:00:00,1,2\n2024-01-01T00:15:00,1,2\n";
        let e = read_time_series(dup.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("`a`"), "{e}");
    }

    #[test]
    fn written_series_reads_back_exactly() {
        let t = TimeSeriesTable::from_columns(vec![("x".into(), vec![0.1, 1.0 / 3.0, -2.5e-7])], 15.0).unwrap();
        let start = NaiveDateTime::parse_from_str("2024-03-01T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap();
        let mut buf = Vec::new();
        write_time_series(&t, start, &mut buf).unwrap();
        let back = read_time_series(buf.as_slice()).unwrap();
        assert_eq!(back.samples, t.samples);
        assert_eq!(back.sampling_interval_minutes, 15.0);
    }

    #[test]
    fn short_gaps_are_interpolated() {
        let mut v: Vec<Option<f64>> = (0..20).map(|i| Some(i as f64)).collect();
        v[1] = None;
        v[2] = None;
        v[19] = None;
        let filled = fill_gaps(&v).unwrap();
        assert_eq!(filled[..4], [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(filled[19], 18.0);
    }

    #[test]
    fn long_gaps_are_rejected() {
        let mut v = vec![Some(1.0); 40];
        for slot in v.iter_mut().skip(10).take(5) {
            *slot = None;
        }
        assert!(fill_gaps(&v).is_none());
        v[12] = Some(1.0);
        assert!(fill_gaps(&v).is_some());
    }

    #[test]
    fn csv_with_gaps_and_timestamps() {
        let text = "timestamp,T_out,u_Qh\n\
            2024-01-01T00:00:00,5.0,0.1\n\
            2024-01-01T00:15:00,,0.2\n\
            2024-01-01T00:30:00,7.0,NA\n\
            2024-01-01T00:45:00,8.0,0.4\n\
            2024-01-01T01:00:00,9.0,0.5\n";
        let t = read_time_series(text.as_bytes()).unwrap();
        assert_eq!(t.variables, ["T_out", "u_Qh"]);
        assert_eq!(t.sampling_interval_minutes, 15.0);
        assert_eq!(t.column("T_out").unwrap(), vec![5.0, 6.0, 7.0, 8.0, 9.0]);
        assert!((t.column("u_Qh").unwrap()[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn irregular_sampling_is_an_error() {
        let text = "time,x\n2024-01-01 00:00:00,1\n2024-01-01 00:15:00,2\n2024-01-01 00:45:00,3\n";
        assert!(matches!(read_time_series(text.as_bytes()), Err(CausalityError::Ingest(_))));
    }

    #[test]
    fn mostly_missing_series_is_dropped() {
        let mut text = String::from("timestamp,a,b\n");
        for i in 0..10 {
            let b = if i < 3 { "" } else { "1" };
            text.push_str(&format!("2024-01-01T{:02}:00:00,{i},{b}\n", i));
        }
        let t = read_time_series(text.as_bytes()).unwrap();
        assert_eq!(t.variables, ["a"]);
        assert_eq!(t.rejected, ["b"]);
    }
}
