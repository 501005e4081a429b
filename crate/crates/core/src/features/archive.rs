//! Matrix archives: concatenated little-endian records
//! `u32 id_len, id bytes, u32 rows, u32 cols, rows*cols f32` in `<name>.bin`,
//! indexed by `<name>.tsv` (`utterance_id  byte_offset  rows  cols`).
//!
//! Used for features, keyword posteriors and embeddings (one row each).

use std::fs;
use std::path::{Path, PathBuf};

use super::{FeatureError, FeatureMatrix};

pub fn encode_record(id: &str, m: &FeatureMatrix, out: &mut Vec<u8>) {
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out.extend_from_slice(&(m.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dims() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn corrupt(path: &Path, message: impl Into<String>) -> FeatureError {
    FeatureError::Archive { path: path.display().to_string(), message: message.into() }
}

/// Decode every record of an archive body, in order.
pub fn decode_records(bytes: &[u8], path: &Path) -> Result<Vec<(String, FeatureMatrix)>, FeatureError> {
    let mut out = Vec::new();
    let mut pos = 0;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], FeatureError> {
        let s = bytes.get(*pos..*pos + n).ok_or_else(|| corrupt(path, format!("truncated record at byte {}", *pos)))?;
        *pos += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes([s[0], s[1], s[2], s[3]]) as usize;
    while pos < bytes.len() {
        let id_len = u32_at(take(&mut pos, 4)?);
        let id = std::str::from_utf8(take(&mut pos, id_len)?)
            .map_err(|_| corrupt(path, "utterance id is not UTF-8"))?
            .to_string();
        let rows = u32_at(take(&mut pos, 4)?);
        let cols = u32_at(take(&mut pos, 4)?);
        let raw = take(&mut pos, rows * cols * 4)?;
        let data = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
        out.push((id, FeatureMatrix::new(rows, cols, data)?));
    }
    Ok(out)
}

pub fn archive_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.bin")), dir.join(format!("{name}.tsv")))
}

pub fn write_archive(dir: &Path, name: &str, records: &[(String, FeatureMatrix)]) -> Result<(), FeatureError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| FeatureError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let (bin, tsv) = archive_paths(dir, name);
    let mut body = Vec::new();
    let mut index = String::new();
    for (id, m) in records {
        index.push_str(&format!("{id}\t{}\t{}\t{}\n", body.len(), m.frames(), m.dims()));
        encode_record(id, m, &mut body);
    }
    fs::write(&bin, body).map_err(io(&bin))?;
    fs::write(&tsv, index).map_err(io(&tsv))?;
    Ok(())
}

/// Read `<name>.bin` and check it against its index.
pub fn read_archive(dir: &Path, name: &str) -> Result<Vec<(String, FeatureMatrix)>, FeatureError> {
    let (bin, tsv) = archive_paths(dir, name);
    read_archive_file(&bin, Some(&tsv))
}

pub fn read_archive_file(bin: &Path, index: Option<&Path>) -> Result<Vec<(String, FeatureMatrix)>, FeatureError> {
    let bytes = fs::read(bin).map_err(|source| FeatureError::Io { path: bin.display().to_string(), source })?;
    let records = decode_records(&bytes, bin)?;
    if let Some(tsv) = index.filter(|p| p.exists()) {
        let text =
            fs::read_to_string(tsv).map_err(|source| FeatureError::Io { path: tsv.display().to_string(), source })?;
        let ids: Vec<&str> = text.lines().filter(|l| !l.is_empty()).filter_map(|l| l.split('\t').next()).collect();
        if ids.len() != records.len() || ids.iter().zip(&records).any(|(a, (b, _))| a != b) {
            return Err(corrupt(tsv, "index does not match archive records"));
        }
    }
    Ok(records)
}
