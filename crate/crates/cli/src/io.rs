//! On-disk formats.
//!
//! Arrays (`.llv`): the bytes `LLV1\n`, an ASCII header `A B C\n`, then
//! `A*B*C` little-endian f64 values in plane-major, row-major order.
//!
//! Images (`.pgm`): binary P5, 16-bit big-endian samples, maxval 65535.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::CliError;

const MAGIC: &[u8] = b"LLV1\n";

pub fn encode_llv(data: &Array3<f64>) -> Vec<u8> {
    let (a, b, c) = data.dim();
    let mut out = Vec::with_capacity(MAGIC.len() + 32 + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("{a} {b} {c}\n").as_bytes());
    for v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_llv(bytes: &[u8]) -> Result<Array3<f64>, String> {
    let rest = bytes.strip_prefix(MAGIC).ok_or("missing LLV1 magic")?;
    let newline = rest.iter().position(|&b| b == b'\n').ok_or("unterminated header")?;
    let header = std::str::from_utf8(&rest[..newline]).map_err(|_| "header is not ASCII")?;
    let dims: Vec<usize> = header
        .split(' ')
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("bad header `{header}`"))?;
    let [a, b, c] = dims[..] else {
        return Err(format!("header needs three sizes, got `{header}`"));
    };
    let payload = &rest[newline + 1..];
    let count = a
        .checked_mul(b)
        .and_then(|v| v.checked_mul(c))
        .ok_or("header sizes overflow")?;
    if payload.len() != count * 8 {
        return Err(format!(
            "payload holds {} bytes, header {a} {b} {c} needs {}",
            payload.len(),
            count * 8
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|ch| f64::from_le_bytes(ch.try_into().expect("chunks of eight")))
        .collect();
    Ok(Array3::from_shape_vec((a, b, c), values).expect("length checked above"))
}

pub fn write_llv(path: &Path, data: &Array3<f64>) -> Result<(), CliError> {
    fs::write(path, encode_llv(data)).map_err(|e| CliError::io(path, e))
}

/// Read failures are I/O errors; malformed contents are config errors.
pub fn read_llv(path: &Path) -> Result<Array3<f64>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_llv(&bytes).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))
}

/// Rounds each value (clamped to `0..=65535`) to a 16-bit sample.
pub fn encode_pgm(image: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = image.dim();
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for v in image.iter() {
        let s = v.round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Array2<u16>, String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err("expected a 16-bit P5 image".into());
    }
    let cols: usize = fields[1].parse().map_err(|_| "bad width")?;
    let rows: usize = fields[2].parse().map_err(|_| "bad height")?;
    let data = &bytes[pos + 1..];
    if data.len() != rows * cols * 2 {
        return Err("PGM payload size mismatch".into());
    }
    let values = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked above"))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Depth map in hundredths of a centimetre; invalid pixels are 0.
pub fn depth_pgm(depth_cm: &Array2<f64>, valid: &Array2<bool>) -> Vec<u8> {
    let scaled = ndarray::Zip::from(depth_cm)
        .and(valid)
        .map_collect(|&d, &ok| if ok { d * 100.0 } else { 0.0 });
    encode_pgm(&scaled)
}

/// Image scaled so its maximum maps to 65535.
pub fn intensity_pgm(image: &Array2<f64>) -> Vec<u8> {
    let max = image.iter().copied().fold(0.0f64, f64::max);
    let factor = if max > 0.0 { 65535.0 / max } else { 0.0 };
    encode_pgm(&image.mapv(|v| v.max(0.0) * factor))
}

/// RFC-4180 CSV text from a header and rows.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(vec![]);
    let fail = |e: csv::Error| CliError::Io(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Manifest: toolkit version, command, config digest and seed, then the
/// full canonical config and the files written.
pub fn manifest_text(command: &str, config_text: &str, seed: u64, files: &[String]) -> String {
    let mut s = format!(
        "toolkit = lensless {}\ncommand = {command}\nconfig_sha256 = {}\nseed = {seed}\n",
        env!("CARGO_PKG_VERSION"),
        sha256_hex(config_text.as_bytes())
    );
    s.push_str("\n[config]\n");
    s.push_str(config_text);
    s.push_str("\n[files]\n");
    for f in files {
        s.push_str(f);
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llv_round_trip_and_layout() {
        let a = Array3::from_shape_fn((2, 3, 4), |(i, j, k)| (i * 100 + j * 10 + k) as f64 - 0.5);
        let bytes = encode_llv(&a);
        assert!(bytes.starts_with(b"LLV1\n2 3 4\n"));
        let header = b"LLV1\n2 3 4\n".len();
        assert_eq!(bytes.len(), header + 24 * 8);
        // second value is element (0, 0, 1)
        assert_eq!(&bytes[header + 8..header + 16], &0.5f64.to_le_bytes());
        assert_eq!(decode_llv(&bytes).unwrap(), a);
    }

    #[test]
    fn llv_rejects_corruption() {
        let bytes = encode_llv(&Array3::zeros((1, 2, 2)));
        assert!(decode_llv(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_llv(b"LLV2\n1 1 1\n").is_err());
        assert!(decode_llv(b"LLV1\n1 x 1\n00000000").is_err());
        assert!(decode_llv(b"LLV1\n1 1\n00000000").is_err());
    }

    #[test]
    fn pgm_encoding() {
        let depth = Array2::from_shape_vec((1, 3), vec![45.0, 52.345, 60.0]).unwrap();
        let valid = Array2::from_shape_vec((1, 3), vec![true, true, false]).unwrap();
        let bytes = depth_pgm(&depth, &valid);
        assert!(bytes.starts_with(b"P5\n3 1\n65535\n"));
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.as_slice().unwrap(), &[4500, 5235, 0]);
        let aif = intensity_pgm(&Array2::from_shape_vec((1, 2), vec![0.5, 2.0]).unwrap());
        assert_eq!(decode_pgm(&aif).unwrap().as_slice().unwrap(), &[16384, 65535]);
    }

    #[test]
    fn csv_quotes_when_needed() {
        let text = csv_text(&["a", "b"], &[vec!["x,y".into(), "1".into()]]).unwrap();
        assert_eq!(text, "a,b\r\n\"x,y\",1\r\n");
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
