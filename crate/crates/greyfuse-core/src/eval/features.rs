//! Binary feature file.
//!
//! Layout: magic `GRFE`, format version (u32 LE), row count (u64 LE),
//! dimension (u64 LE), then row-major 32-bit little-endian floats. A
//! sidecar at `<path>.meta` in manifest format binds rows to image records
//! in order.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::dataset::{parse_manifest, write_manifest, DatasetSplit, ImageRecord};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"GRFE";
pub const FEATURE_VERSION: u32 = 1;

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    PathBuf::from(s)
}

fn file_err(path: &Path, message: impl Into<String>) -> Error {
    Error::FeatureFile {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Write features plus the sidecar binding each row to a record. `split`
/// labels the sidecar rows (`query`, `gallery`, ...).
pub fn write_features(
    path: &Path,
    features: ArrayView2<f32>,
    records: &[ImageRecord],
    split: &str,
) -> Result<()> {
    if records.len() != features.nrows() {
        return Err(file_err(
            path,
            format!(
                "{} feature rows but {} records",
                features.nrows(),
                records.len()
            ),
        ));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(FEATURE_MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION)
        .map_err(|e| Error::io(path, e))?;
    w.write_u64::<LittleEndian>(features.nrows() as u64)
        .map_err(|e| Error::io(path, e))?;
    w.write_u64::<LittleEndian>(features.ncols() as u64)
        .map_err(|e| Error::io(path, e))?;
    for row in features.rows() {
        for &v in row {
            w.write_f32::<LittleEndian>(v)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let mut sidecar = DatasetSplit::default();
    match split {
        "train" => sidecar.train = records.to_vec(),
        "gallery" => sidecar.gallery = records.to_vec(),
        _ => sidecar.query = records.to_vec(),
    }
    write_manifest(&sidecar_path(path), &sidecar)
}

/// Read a feature file and its sidecar; rows and records are aligned.
pub fn read_features(path: &Path) -> Result<(Array2<f32>, Vec<ImageRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != FEATURE_MAGIC {
        return Err(file_err(path, "bad magic bytes (not a feature file)"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io(path, e))?;
    if version != FEATURE_VERSION {
        return Err(file_err(path, format!("unsupported version {version}")));
    }
    let rows = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::io(path, e))? as usize;
    let dim = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::io(path, e))? as usize;
    let mut data = vec![0f32; rows * dim];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|_| file_err(path, "truncated payload"))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail).map_err(|e| Error::io(path, e))? != 0 {
        return Err(file_err(path, "trailing bytes after payload"));
    }
    let features = Array2::from_shape_vec((rows, dim), data)
        .map_err(|e| file_err(path, e.to_string()))?;

    let side = sidecar_path(path);
    let split = parse_manifest(&side)?;
    let mut records = split.train;
    records.extend(split.query);
    records.extend(split.gallery);
    if records.len() != rows {
        return Err(file_err(
            path,
            format!(
                "sidecar {} binds {} records to {} feature rows",
                side.display(),
                records.len(),
                rows
            ),
        ));
    }
    Ok((features, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn recs(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| ImageRecord {
                image_path: format!("img{i}.png").into(),
                person_id: i as i64,
                camera_id: (i % 2) as u32,
            })
            .collect()
    }

    #[test]
    fn roundtrip_preserves_rows_and_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.grfe");
        let f = array![[1.0f32, -2.5, 3.25], [0.0, 0.5, f32::MIN_POSITIVE]];
        write_features(&path, f.view(), &recs(2), "query").unwrap();
        let (back, records) = read_features(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].person_id, 1);
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.grfe");
        let f = array![[1.0f32, 2.0]];
        write_features(&path, f.view(), &recs(1), "gallery").unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_features(&path).is_err());

        bytes[0] = b'G';
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_features(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.grfe");
        write_features(&path, array![[1.0f32]].view(), &recs(1), "query").unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(read_features(&path).is_err());
    }
}
