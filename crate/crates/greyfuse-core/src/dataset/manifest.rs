//! Manifest ingestion.
//!
//! One record per line, UTF-8: `split,image_path,person_id,camera_id` with
//! `split` one of `train`, `query`, `gallery`. Full-line `#` comments and
//! blank lines are skipped. Relative image paths resolve against the
//! manifest's directory. Junk ids (negative person_id) are dropped from
//! train and query with a warning, and retained in the gallery where the
//! evaluation protocol filters them.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{DatasetSplit, ImageRecord};
use crate::error::{Error, Result};

fn record_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_manifest(path: &Path) -> Result<DatasetSplit> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut train = Vec::new();
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    let mut warnings = Vec::new();
    let mut seen: HashSet<(String, PathBuf)> = HashSet::new();

    for (ix, raw) in text.lines().enumerate() {
        let lineno = ix + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(record_err(
                path,
                lineno,
                format!("expected 4 comma-separated fields, got {}", fields.len()),
            ));
        }
        let split = fields[0];
        let image_path = {
            let p = PathBuf::from(fields[1]);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let person_id: i64 = fields[2]
            .parse()
            .map_err(|_| record_err(path, lineno, format!("bad person_id {:?}", fields[2])))?;
        let camera_id: u32 = fields[3]
            .parse()
            .map_err(|_| record_err(path, lineno, format!("bad camera_id {:?}", fields[3])))?;

        if !seen.insert((split.to_string(), image_path.clone())) {
            return Err(record_err(
                path,
                lineno,
                format!("duplicate ({split}, {}) record", image_path.display()),
            ));
        }

        let record = ImageRecord {
            image_path,
            person_id,
            camera_id,
        };
        match split {
            "train" | "query" if record.is_junk() => {
                warnings.push(format!(
                    "line {lineno}: junk id {person_id} dropped from {split}"
                ));
            }
            "train" => train.push(record),
            "query" => query.push(record),
            "gallery" => gallery.push(record),
            other => {
                return Err(record_err(
                    path,
                    lineno,
                    format!("unknown split {other:?} (expected train|query|gallery)"),
                ))
            }
        }
    }

    let mut split = DatasetSplit::from_parts(train, query, gallery);
    warnings.append(&mut split.warnings);
    split.warnings = warnings;
    Ok(split)
}

/// Write records in manifest format; image paths are stored relative to the
/// manifest's directory when possible.
pub fn write_manifest(path: &Path, split: &DatasetSplit) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = String::from("# split,image_path,person_id,camera_id\n");
    for (name, records) in [
        ("train", &split.train),
        ("query", &split.query),
        ("gallery", &split.gallery),
    ] {
        for r in records {
            let p = r.image_path.strip_prefix(base).unwrap_or(&r.image_path);
            out.push_str(&format!(
                "{},{},{},{}\n",
                name,
                p.display(),
                r.person_id,
                r.camera_id
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn parses_and_builds_dense_class_index() {
        let (_d, path) = write_tmp(
            "# comment\n\
             train,a.png,7,0\n\
             train,b.png,42,1\n\
             train,c.png,7,1\n\
             train,d.png,42,0\n\
             query,q.png,7,0\n\
             gallery,g.png,7,1\n",
        );
        let split = parse_manifest(&path).unwrap();
        assert_eq!(split.train.len(), 4);
        assert_eq!(split.class_index.num_classes(), 2);
        // first-appearance order: 7 -> 0, 42 -> 1
        assert_eq!(split.class_index.class_of(7), Some(0));
        assert_eq!(split.class_index.class_of(42), Some(1));
        assert_eq!(split.class_index.pid_of(1), Some(42));
        assert!(split.warnings.is_empty());
    }

    #[test]
    fn reports_line_numbers_on_malformed_rows() {
        let (_d, path) = write_tmp("train,a.png,1,0\ntrain,b.png,1\n");
        let err = parse_manifest(&path).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }

    #[test]
    fn rejects_duplicate_split_path_pairs() {
        let (_d, path) = write_tmp("train,a.png,1,0\ntrain,a.png,2,1\n");
        let err = parse_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(parse_manifest(Path::new("/nonexistent/m.csv")).is_err());
    }

    #[test]
    fn warns_when_query_id_lacks_cross_camera_gallery_match() {
        let (_d, path) = write_tmp(
            "train,a.png,1,0\n\
             train,b.png,1,1\n\
             query,q.png,5,0\n\
             gallery,g.png,5,0\n",
        );
        let split = parse_manifest(&path).unwrap();
        assert_eq!(split.query.len(), 1);
        assert!(
            split.warnings.iter().any(|w| w.contains("5")),
            "{:?}",
            split.warnings
        );
    }

    #[test]
    fn junk_ids_dropped_from_train_and_query_kept_in_gallery() {
        let (_d, path) = write_tmp(
            "train,a.png,-1,0\n\
             train,b.png,1,0\n\
             train,c.png,1,1\n\
             query,q.png,-1,0\n\
             gallery,g.png,-1,3\n",
        );
        let split = parse_manifest(&path).unwrap();
        assert_eq!(split.train.len(), 2);
        assert_eq!(split.class_index.num_classes(), 1);
        assert!(split.query.is_empty());
        assert_eq!(split.gallery.len(), 1);
        assert!(split.gallery[0].is_junk());
        assert_eq!(split.warnings.len(), 2);
    }

    #[test]
    fn roundtrips_through_write_manifest() {
        let (_d, path) = write_tmp(
            "train,a.png,1,0\ntrain,b.png,1,1\nquery,q.png,2,0\ngallery,g.png,2,1\n",
        );
        let split = parse_manifest(&path).unwrap();
        let out = path.parent().unwrap().join("copy.csv");
        write_manifest(&out, &split).unwrap();
        let again = parse_manifest(&out).unwrap();
        assert_eq!(again.train.len(), split.train.len());
        assert_eq!(again.query.len(), split.query.len());
        assert_eq!(again.gallery.len(), split.gallery.len());
        assert_eq!(again.train[0].image_path, split.train[0].image_path);
    }
}
