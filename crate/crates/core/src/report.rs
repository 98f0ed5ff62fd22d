//! Deterministic CSV and JSON writers shared by the reports.

use serde::Serialize;

/// Comma-separated table with a header row and LF line endings. Cells are
/// quoted only when needed.
pub fn csv_table<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

/// Pretty JSON with a trailing newline.
pub fn json_pretty<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}
