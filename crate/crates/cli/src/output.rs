//! File writers. Numbers are printed with full precision so that reruns
//! with the same inputs produce identical bytes.

use std::path::Path;

use crate::run::RunError;

fn io(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(io(path))
}

/// CSV with a header row; every value as `{:.17e}`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path)(e.into()))?;
    w.write_record(header).map_err(|e| io(path)(e.into()))?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:.17e}"))).map_err(|e| io(path)(e.into()))?;
    }
    w.flush().map_err(io(path))
}
