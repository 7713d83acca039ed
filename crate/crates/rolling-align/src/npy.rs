//! Minimal NPY (version 1.0) reader/writer.
//!
//! Only what the file protocol needs: C-order little-endian `f32` arrays
//! (videos, snippets, flow) and `u8` arrays (masks). Headers are padded to
//! a 64-byte boundary as the format requires.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpyArray<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> NpyArray<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

fn header_bytes(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_str}, }}");
    // magic(6) + version(2) + header_len(2) + dict + padding + '\n', total
    // length a multiple of 64.
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let mut out = Vec::with_capacity(10 + dict.len() + pad + 1);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[0x01, 0x00]);
    let header_len = (dict.len() + pad + 1) as u16;
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(pad));
    out.push(b'\n');
    out
}

pub fn write_f32(path: &Path, array: &NpyArray<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header_bytes("<f4", &array.shape))?;
    for v in &array.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_u8(path: &Path, array: &NpyArray<u8>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header_bytes("|u1", &array.shape))?;
    w.write_all(&array.data)?;
    w.flush()?;
    Ok(())
}

struct ParsedHeader {
    descr: String,
    shape: Vec<usize>,
}

fn parse_header<R: Read>(r: &mut R, path: &Path) -> Result<ParsedHeader> {
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated npy header".into()))?;
    if &magic[..6] != MAGIC {
        return Err(bad("not an npy file (magic mismatch)".into()));
    }
    if magic[6] != 1 {
        return Err(bad(format!("unsupported npy version {}.{}", magic[6], magic[7])));
    }
    let mut len_bytes = [0u8; 2];
    r.read_exact(&mut len_bytes)?;
    let header_len = u16::from_le_bytes(len_bytes) as usize;
    let mut dict = vec![0u8; header_len];
    r.read_exact(&mut dict)?;
    let dict = String::from_utf8(dict).map_err(|_| bad("header is not utf-8".into()))?;

    let descr = extract_quoted(&dict, "'descr':").ok_or_else(|| bad("missing descr".into()))?;
    if dict.contains("'fortran_order': True") {
        return Err(bad("fortran-order arrays are not supported".into()));
    }
    let shape_src = dict
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split('(').nth(1))
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad("missing shape".into()))?;
    let mut shape = Vec::new();
    for part in shape_src.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        shape.push(
            part.parse::<usize>()
                .map_err(|_| bad(format!("bad shape component {part:?}")))?,
        );
    }
    if shape.is_empty() {
        return Err(bad("zero-dimensional arrays are not supported".into()));
    }
    Ok(ParsedHeader { descr, shape })
}

fn extract_quoted(dict: &str, key: &str) -> Option<String> {
    let after = dict.split(key).nth(1)?;
    let start = after.find('\'')? + 1;
    let end = start + after[start..].find('\'')?;
    Some(after[start..end].to_string())
}

pub fn read_f32(path: &Path) -> Result<NpyArray<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let header = parse_header(&mut r, path)?;
    if header.descr != "<f4" {
        return Err(Error::Format(format!(
            "{}: expected little-endian float32 ('<f4'), got {:?}",
            path.display(),
            header.descr
        )));
    }
    let count: usize = header.shape.iter().product();
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    NpyArray::new(header.shape, data)
}

pub fn read_u8(path: &Path) -> Result<NpyArray<u8>> {
    let mut r = BufReader::new(File::open(path)?);
    let header = parse_header(&mut r, path)?;
    if header.descr != "|u1" && header.descr != "<u1" && header.descr != "u1" {
        return Err(Error::Format(format!(
            "{}: expected uint8, got {:?}",
            path.display(),
            header.descr
        )));
    }
    let count: usize = header.shape.iter().product();
    let mut data = vec![0u8; count];
    r.read_exact(&mut data)?;
    NpyArray::new(header.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_byte_aligned() {
        for shape in [vec![5], vec![3, 4], vec![120, 64, 96], vec![119, 2, 64, 96]] {
            let h = header_bytes("<f4", &shape);
            assert_eq!(h.len() % 64, 0, "shape {shape:?}");
            assert_eq!(*h.last().unwrap(), b'\n');
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.npy");
        let data: Vec<f32> = (0..24)
            .map(|i| (i as f32 - 11.5) * 0.3 + 1.0 / (i as f32 + 1.0))
            .collect();
        let arr = NpyArray::new(vec![2, 3, 4], data).unwrap();
        write_f32(&path, &arr).unwrap();
        let back = read_f32(&path).unwrap();
        assert_eq!(back.shape, vec![2, 3, 4]);
        for (a, b) in arr.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn one_dimensional_shape_uses_trailing_comma() {
        let h = header_bytes("<f4", &[7]);
        let text = String::from_utf8_lossy(&h[10..]);
        assert!(text.contains("(7,)"), "{text}");
    }

    #[test]
    fn u8_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.npy");
        let arr = NpyArray::new(vec![3, 2], vec![1, 0, 1, 1, 0, 0]).unwrap();
        write_u8(&path, &arr).unwrap();
        let back = read_u8(&path).unwrap();
        assert_eq!(back, arr);
    }

    #[test]
    fn rejects_wrong_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.npy");
        let arr = NpyArray::new(vec![2], vec![1u8, 2]).unwrap();
        write_u8(&path, &arr).unwrap();
        assert!(read_f32(&path).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        let arr = NpyArray::new(vec![4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        write_f32(&path, &arr).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(read_f32(&path).is_err());
    }
}
