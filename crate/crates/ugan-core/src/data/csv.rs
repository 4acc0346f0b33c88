//! Loss/metric series as CSV. One header row, one row per step, 1-based step
//! index, '.' decimal point, no locale. Values print with Rust's shortest
//! round-trip float formatting, so identical runs give identical bytes.

use super::idx::atomic_write;
use crate::error::{Error, Result};
use std::path::Path;

/// Write aligned series as columns after a leading `step` column.
/// `header` names the value columns, e.g. `["loss_d", "loss_g"]`.
pub fn write_series_csv(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    if header.len() != columns.len() {
        return Err(Error::Contract(format!(
            "{} header names for {} columns",
            header.len(),
            columns.len()
        )));
    }
    let rows = columns.first().map(|c| c.len()).unwrap_or(0);
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::Contract("csv columns have differing lengths".into()));
    }
    let mut out = String::new();
    out.push_str("step");
    for h in header {
        out.push(',');
        out.push_str(h);
    }
    out.push('\n');
    for row in 0..rows {
        out.push_str(&(row + 1).to_string());
        for col in columns {
            out.push(',');
            out.push_str(&col[row].to_string());
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_series_csv(&p, &["loss_d", "loss_g"], &[&[1.5, 0.25], &[0.5, 2.0]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "step,loss_d,loss_g\n1,1.5,0.5\n2,0.25,2\n");
    }

    #[test]
    fn empty_series_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        write_series_csv(&p, &["loss_d", "loss_g"], &[&[], &[]]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "step,loss_d,loss_g\n");
    }

    #[test]
    fn mismatched_columns_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        assert!(write_series_csv(&p, &["a"], &[&[1.0], &[2.0]]).is_err());
        assert!(write_series_csv(&p, &["a", "b"], &[&[1.0], &[2.0, 3.0]]).is_err());
    }
}
