use std::path::Path;

use crate::error::Result;

/// A report with a fixed column layout. Values arrive already formatted so
/// exports are byte-stable.
pub trait CsvReport {
    fn header(&self) -> Vec<&'static str>;
    fn rows(&self) -> Vec<Vec<String>>;
}

/// Writes the report to any writer; returns the number of data rows.
pub fn write_csv<W: std::io::Write>(report: &(impl CsvReport + ?Sized), header: &[&str], out: W) -> Result<usize> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    let rows = report.rows();
    for row in &rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(rows.len())
}

pub fn export_csv(report: &(impl CsvReport + ?Sized), path: impl AsRef<Path>) -> Result<usize> {
    let file = std::fs::File::create(path.as_ref())?;
    let header = report.header();
    write_csv(report, &header, std::io::BufWriter::new(file))
}
