//! Feature-matrix files and atomic output writes.
//!
//! Two matrix formats are understood: CSV (one row per instance, optional
//! header) and a flat binary layout `MRGF`, u16 version, u64 rows, u64 cols,
//! then row-major little-endian f64.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"MRGF";
pub const FEATURE_VERSION: u16 = 1;

const MAX_ENTRIES: u64 = 1 << 32;

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { location: location.into(), message: message.into() }
}

/// Read a numeric CSV. A first line with any non-numeric field is taken as a header.
pub fn read_csv<R: Read>(reader: R, source: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows == 0 && cols.is_none() => {
                cols = Some(fields.len());
                continue;
            }
            Err(_) => {
                let bad = fields.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or(&"");
                return Err(parse_err(format!("{source}:{}", lineno + 1), format!("'{bad}' is not a number")));
            }
        };
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(format!("{source}:{}", lineno + 1), format!("non-finite value {v}")));
        }
        match cols {
            Some(c) if c != values.len() => {
                return Err(parse_err(
                    format!("{source}:{}", lineno + 1),
                    format!("expected {c} fields, found {}", values.len()),
                ))
            }
            _ => cols = Some(values.len()),
        }
        data.extend(values);
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(source, "no data rows"));
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

pub fn write_csv<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_bin<R: Read>(mut r: R, source: &str) -> Result<Matrix> {
    let mut head = [0u8; 22];
    r.read_exact(&mut head).map_err(|_| parse_err(source, "file too short for a feature header"))?;
    if &head[..4] != FEATURE_MAGIC {
        return Err(parse_err(source, "not a feature matrix file (bad magic)"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FEATURE_VERSION {
        return Err(parse_err(source, format!("unsupported feature file version {version}")));
    }
    let rows = u64::from_le_bytes(head[6..14].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(head[14..22].try_into().expect("8 bytes"));
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > MAX_ENTRIES {
        return Err(parse_err(source, format!("implausible shape {rows}x{cols}")));
    }
    let n = (rows * cols) as usize;
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| parse_err(source, format!("expected {n} values, file is truncated")))?;
    let data: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(parse_err(source, format!("non-finite value at row {}", i / cols as usize)));
    }
    Matrix::new(rows as usize, cols as usize, data)
}

pub fn write_bin<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(m.as_slice().len() * 8);
    for x in m.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Load a matrix, choosing the format by magic bytes (binary) or falling back to CSV.
pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    let source = path.display().to_string();
    if bytes.starts_with(FEATURE_MAGIC) {
        read_bin(bytes.as_slice(), &source)
    } else {
        read_csv(bytes.as_slice(), &source)
    }
}

/// Write via a temporary file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
