//! Recording file formats.
//!
//! * Delimited text: the first row holds channel names, every later row is
//!   one time step with one column per channel. Comma, tab, semicolon or
//!   whitespace separators are detected from the header.
//! * Raw binary: `"EEGR"`, `u32` channels, `u32` time steps, `f32` sample
//!   rate, then time-major `f32` samples (row = time step), little-endian.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::Recording;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EEGR";

pub fn write_binary(rec: &Recording, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * rec.n_channels() * rec.n_samples());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(rec.n_channels() as u32).to_le_bytes());
    buf.extend_from_slice(&(rec.n_samples() as u32).to_le_bytes());
    buf.extend_from_slice(&(rec.sample_rate_hz as f32).to_le_bytes());
    for t in 0..rec.n_samples() {
        for c in 0..rec.n_channels() {
            buf.extend_from_slice(&(rec.channel(c)[t] as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_binary(path: &Path, label: &str) -> Result<Recording> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::format(path, "missing EEGR header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let n_ch = word(4) as usize;
    let n_t = word(8) as usize;
    let fs_hz = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
    let body = &bytes[16..];
    if body.len() != 4 * n_ch * n_t {
        return Err(Error::format(
            path,
            format!("expected {} sample bytes for {n_ch}x{n_t}, found {}", 4 * n_ch * n_t, body.len()),
        ));
    }
    let mut channels = vec![Vec::with_capacity(n_t); n_ch];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        channels[i % n_ch].push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Recording::new(channels, fs_hz, label)
}

fn split_fields(line: &str, sep: Option<char>) -> Vec<&str> {
    match sep {
        Some(c) => line.split(c).map(str::trim).collect(),
        None => line.split_whitespace().collect(),
    }
}

pub fn read_text(path: &Path, sample_rate_hz: f64, label: &str) -> Result<Recording> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::format(path, "empty file")),
    };
    let sep = [',', '\t', ';'].into_iter().find(|c| header.contains(*c));
    let names: Vec<String> = split_fields(&header, sep).into_iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = split_fields(&line, sep)
            .into_iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 2)))?;
        if row.len() != names.len() {
            return Err(Error::format(
                path,
                format!("line {}: {} values for {} channels", lineno + 2, row.len(), names.len()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no samples"));
    }
    let mut rec = Recording::from_time_major(&rows, sample_rate_hz, label)?;
    rec.channel_names = names;
    Ok(rec)
}

/// Dispatches on the file's leading bytes: binary when it starts with the
/// EEGR magic, delimited text otherwise.
pub fn read_recording(path: &Path, text_sample_rate_hz: f64, label: &str) -> Result<Recording> {
    let mut head = [0u8; 4];
    let is_binary = fs::File::open(path)
        .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut head))
        .map(|_| &head == BINARY_MAGIC)
        .unwrap_or(false);
    if is_binary {
        read_binary(path, label)
    } else {
        read_text(path, text_sample_rate_hz, label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.eegr");
        let rec = Recording::new(vec![vec![0.5, -1.25, 3.0], vec![2.0, 0.0, -7.5]], 250.0, "happy").unwrap();
        write_binary(&rec, &p).unwrap();
        let back = read_recording(&p, 0.0, "happy").unwrap();
        assert_eq!(back.n_channels(), 2);
        assert_eq!(back.channel(1), &[2.0, 0.0, -7.5]);
        assert_eq!(back.sample_rate_hz, 250.0);
    }

    #[test]
    fn text_rows_are_time_steps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        fs::write(&p, "Fp1,Fp2,Cz\n1,2,3\n4,5,6\n").unwrap();
        let rec = read_recording(&p, 200.0, "sad").unwrap();
        assert_eq!(rec.channel_names, ["Fp1", "Fp2", "Cz"]);
        assert_eq!(rec.channel(0), &[1.0, 4.0]);
        assert_eq!(rec.channel(2), &[3.0, 6.0]);
    }

    #[test]
    fn truncated_binary_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.eegr");
        let mut bytes = BINARY_MAGIC.to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&10u32.to_le_bytes());
        bytes.extend_from_slice(&100f32.to_le_bytes());
        bytes.extend_from_slice(&[0; 8]);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_binary(&p, "x"), Err(Error::Format { .. })));
    }

    #[test]
    fn ragged_text_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tsv");
        fs::write(&p, "a\tb\n1\t2\n3\n").unwrap();
        assert!(read_text(&p, 100.0, "x").is_err());
    }
}
