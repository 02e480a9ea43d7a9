//! Plain-text output helpers shared by the CSV writers.

use std::io::{self, Write};

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one CSV line of numbers, LF terminated.
pub fn write_row<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let line: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
    writeln!(w, "{}", line.join(","))
}

pub fn write_header<W: Write>(w: &mut W, columns: &[&str]) -> io::Result<()> {
    writeln!(w, "{}", columns.join(","))
}
