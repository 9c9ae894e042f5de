//! File formats for signals and images: binary 16-bit PGM (P5) and plain
//! CSV (one value per line, row-major, '.' decimal separator).
//!
//! PGM sample values are min/max scaled to the full 16-bit range; the
//! scaling is recorded in a `<name>.meta.txt` sidecar so physical values
//! are recoverable. Readers accept either format.

use crate::{GiasError, Result};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// Writes a row-major image as 16-bit big-endian binary PGM plus a sidecar
/// recording the value scaling.
pub fn write_pgm16(path: &Path, data: &[f64], width: usize, height: usize) -> Result<()> {
    if data.len() != width * height {
        return Err(GiasError::Dimension("pgm shape mismatch".into()));
    }
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if max > min { 65535.0 / (max - min) } else { 0.0 };

    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    for &v in data {
        let q = ((v - min) * scale).round().clamp(0.0, 65535.0) as u16;
        w.write_all(&q.to_be_bytes())?;
    }
    w.flush()?;

    let meta = format!("min {min}\nmax {max}\n");
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.txt");
    std::path::PathBuf::from(s)
}

/// Reads a binary PGM (8- or 16-bit). When the scaling sidecar written by
/// [`write_pgm16`] is present the physical values are restored; otherwise
/// raw sample values are returned.
pub fn read_pgm16(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(GiasError::Format("truncated pgm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(GiasError::Format("not a binary pgm (P5) file".into()));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| GiasError::Format("bad pgm width".into()))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| GiasError::Format("bad pgm height".into()))?;
    let maxval: u32 = token(&bytes)?
        .parse()
        .map_err(|_| GiasError::Format("bad pgm maxval".into()))?;
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;

    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if maxval > 255 {
        if bytes.len() < pos + 2 * n {
            return Err(GiasError::Format("pgm raster truncated".into()));
        }
        for k in 0..n {
            let hi = bytes[pos + 2 * k] as u16;
            let lo = bytes[pos + 2 * k + 1] as u16;
            data.push(((hi << 8) | lo) as f64);
        }
    } else {
        if bytes.len() < pos + n {
            return Err(GiasError::Format("pgm raster truncated".into()));
        }
        for k in 0..n {
            data.push(bytes[pos + k] as f64);
        }
    }

    // Restore physical values when the sidecar is available.
    if let Ok(meta) = std::fs::read_to_string(sidecar_path(path)) {
        let mut min = None;
        let mut max = None;
        for line in meta.lines() {
            let mut it = line.split_whitespace();
            match (it.next(), it.next()) {
                (Some("min"), Some(v)) => min = v.parse::<f64>().ok(),
                (Some("max"), Some(v)) => max = v.parse::<f64>().ok(),
                _ => {}
            }
        }
        if let (Some(min), Some(max)) = (min, max) {
            let scale = (max - min) / maxval as f64;
            for v in data.iter_mut() {
                *v = min + *v * scale;
            }
        }
    }
    Ok((data, width, height))
}

/// Writes values one per line (shortest round-trip float formatting).
pub fn write_csv_values(path: &Path, data: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for v in data {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one value per line, ignoring blank lines.
pub fn read_csv_values(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        out.push(
            s.parse::<f64>()
                .map_err(|_| GiasError::Format(format!("bad csv value: {s}")))?,
        );
    }
    Ok(out)
}

/// Reads a vector or image from either format based on the extension.
pub fn read_values_auto(path: &Path) -> Result<Vec<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => Ok(read_pgm16(path)?.0),
        _ => read_csv_values(path),
    }
}
