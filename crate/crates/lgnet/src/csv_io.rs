//! CSV time-series files: a header row, a leading integer time column and
//! one column per variable. Empty cells and the literal `NaN` are missing.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use lgnet_core::data::{window_series, Dataset, MaskedMatrix};

use crate::error::AppError;

/// A long series read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub names: Vec<String>,
    pub time: Vec<i64>,
    pub data: MaskedMatrix,
}

pub fn read_series(path: &Path) -> Result<Series, AppError> {
    let file = File::open(path).map_err(|e| AppError::input(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let bad = |msg: String| AppError::input(format!("{}: {msg}", path.display()));
    let header = reader.headers().map_err(|e| bad(format!("unreadable header: {e}")))?.clone();
    if header.len() < 2 {
        return Err(bad("header needs a time column and at least one variable".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let d = names.len();
    let mut time = Vec::new();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // Line numbers are 1-based and count the header.
        let line = r + 2;
        let record = record.map_err(|e| bad(format!("line {line}: {e}")))?;
        if record.len() != d + 1 {
            return Err(bad(format!("line {line}: expected {} fields, found {}", d + 1, record.len())));
        }
        let t: i64 = record[0]
            .parse()
            .map_err(|_| bad(format!("line {line}, column {}: time index {:?} is not an integer", header[0].to_owned(), &record[0])))?;
        if let Some(&prev) = time.last() {
            if t != prev + 1 {
                return Err(bad(format!("line {line}: time index {t} does not follow {prev}")));
            }
        }
        time.push(t);
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() || cell == "NaN" {
                values.push(0.0);
                mask.push(false);
                continue;
            }
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                bad(format!("line {line}, column {:?}: cannot parse {cell:?} as a number", names[j]))
            })?;
            values.push(v);
            mask.push(true);
        }
    }
    let data = MaskedMatrix::new(time.len(), d, values, mask).map_err(|e| bad(e.to_string()))?;
    Ok(Series { names, time, data })
}

/// Reads `path` and cuts it into windows of `n + k` rows every `stride` rows.
pub fn load_csv(path: &Path, n: usize, k: usize, stride: usize) -> Result<Dataset, AppError> {
    let series = read_series(path)?;
    let rows = series.data.rows();
    if rows < n + k {
        return Err(AppError::input(format!(
            "{}: {rows} data rows, a window needs n + k = {}",
            path.display(),
            n + k
        )));
    }
    let samples = window_series(&series.data, n, k, stride).map_err(|e| AppError::input(e.to_string()))?;
    let provenance = format!("{} n={n} k={k} stride={stride}", path.display());
    Dataset::new(samples, provenance).map_err(|e| AppError::input(e.to_string()))
}

pub fn write_series(path: &Path, series: &Series) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::io(path, e.into()))?;
    let mut header = vec!["t".to_owned()];
    header.extend(series.names.iter().cloned());
    w.write_record(&header).map_err(|e| AppError::io(path, e.into()))?;
    let d = series.data.cols();
    for (i, t) in series.time.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for j in 0..d {
            row.push(match series.data.get(i, j) {
                Some(v) => format!("{v}"),
                None => String::new(),
            });
        }
        w.write_record(&row).map_err(|e| AppError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))?;
    Ok(())
}

/// Writes a plain comma-separated table.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), AppError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn twelve_rows() -> String {
        let mut s = String::from("t,a,b\n");
        for i in 0..12 {
            s.push_str(&format!("{i},{},{}\n", i as f64 * 0.5, if i == 3 { "NaN".into() } else { i.to_string() }));
        }
        s
    }

    #[test]
    fn window_counts_and_masks() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.csv", &twelve_rows());
        let ds = load_csv(&p, 9, 3, 12).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(load_csv(&p, 9, 3, 1).unwrap().len(), 1);
        let s = &ds.samples[0];
        assert!(!s.history.observed(3, 1));
        assert_eq!(s.history.get(2, 0), Some(1.0));
        assert_eq!(s.target.get(2, 1), Some(11.0));
        assert!(load_csv(&p, 10, 3, 1).unwrap_err().to_string().contains("n + k = 13"));
    }

    #[test]
    fn empty_cells_are_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.csv", "t,a\n0,1\n1,\n2,3\n");
        let s = read_series(&p).unwrap();
        assert_eq!(s.data.mask(), &[true, false, true]);
    }

    #[test]
    fn diagnostics_name_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.csv", "t,a,b\n0,1,2\n1,abc,3\n");
        let e = read_series(&p).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("\"a\"") && e.contains("abc"), "{e}");
        let p = write(&dir, "y.csv", "t,a,b\n0,1,2\n1,3\n");
        let e = read_series(&p).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("expected 3 fields"), "{e}");
        let p = write(&dir, "z.csv", "t,a\n0,1\n2,3\n");
        assert!(read_series(&p).unwrap_err().to_string().contains("does not follow"));
        let e = read_series(&dir.path().join("missing.csv")).unwrap_err();
        assert!(e.to_string().contains("missing.csv"));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.csv", &twelve_rows());
        let s = read_series(&p).unwrap();
        let q = dir.path().join("y.csv");
        write_series(&q, &s).unwrap();
        assert_eq!(read_series(&q).unwrap(), s);
    }
}
