//! Plain CSV/JSON writers shared by the analysis modules.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Square matrix with a header row and column of labels.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let e = |err| Error::io(path, err);
    write!(w, "id").map_err(e)?;
    for l in labels {
        write!(w, ",{l}").map_err(e)?;
    }
    writeln!(w).map_err(e)?;
    for (i, l) in labels.iter().enumerate() {
        write!(w, "{l}").map_err(e)?;
        for j in 0..m.ncols() {
            write!(w, ",{}", m[(i, j)]).map_err(e)?;
        }
        writeln!(w).map_err(e)?;
    }
    w.flush().map_err(e)
}

/// Rows of pre-formatted fields under a header.
pub fn write_rows_csv<R, I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let e = |err| Error::io(path, err);
    writeln!(w, "{}", header.join(",")).map_err(e)?;
    for row in rows {
        let fields: Vec<String> = row.into_iter().collect();
        writeln!(w, "{}", fields.join(",")).map_err(e)?;
    }
    w.flush().map_err(e)
}

/// `NaN` for absent values so every CSV row has the same width.
pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}
