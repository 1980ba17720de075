//! Market1501-style directory ingestion.
//!
//! Layout: `bounding_box_train/` (train), `query/` (query),
//! `bounding_box_test/` (gallery), with file names `<pid>_c<cam>...`;
//! pid -1 marks junk detections.

use std::path::Path;

use super::{DatasetSplit, ImageRecord};
use crate::error::{Error, Result};

/// Extract `(person_id, camera_id)` from a `<pid>_c<cam><rest>` file name.
/// The junk sentinel pid -1 is preserved.
pub fn parse_market_filename(name: &str) -> Result<(i64, u32)> {
    let fail = || Error::FilenamePattern(name.to_string());
    let (pid_part, rest) = name.split_once('_').ok_or_else(fail)?;
    let pid: i64 = pid_part.parse().map_err(|_| fail())?;
    let rest = rest.strip_prefix('c').ok_or_else(fail)?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(fail());
    }
    let cam: u32 = digits.parse().map_err(|_| fail())?;
    Ok((pid, cam))
}

fn is_image_file(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".jpg") || lower.ends_with(".jpeg") || lower.ends_with(".png")
}

fn scan_subdir(root: &Path, sub: &str) -> Result<Vec<ImageRecord>> {
    let dir = root.join(sub);
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_file() && is_image_file(&name) {
            names.push(name);
        }
    }
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let (person_id, camera_id) = parse_market_filename(&name)?;
            Ok(ImageRecord {
                image_path: dir.join(name),
                person_id,
                camera_id,
            })
        })
        .collect()
}

/// Ingest a Market1501-style directory tree.
pub fn scan_market_directory(root: &Path) -> Result<DatasetSplit> {
    let mut warnings = Vec::new();
    let mut train = scan_subdir(root, "bounding_box_train")?;
    let mut query = scan_subdir(root, "query")?;
    let gallery = scan_subdir(root, "bounding_box_test")?;
    for (name, records) in [("train", &mut train), ("query", &mut query)] {
        let before = records.len();
        records.retain(|r| !r.is_junk());
        if records.len() != before {
            warnings.push(format!(
                "{} junk ids dropped from {name}",
                before - records.len()
            ));
        }
    }
    let mut split = DatasetSplit::from_parts(train, query, gallery);
    warnings.append(&mut split.warnings);
    split.warnings = warnings;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_standard_names() {
        assert_eq!(
            parse_market_filename("0001_c1s1_000151_00.jpg").unwrap(),
            (1, 1)
        );
        assert_eq!(
            parse_market_filename("1501_c6s3_555672_00.jpg").unwrap(),
            (1501, 6)
        );
    }

    #[test]
    fn preserves_junk_sentinel() {
        let (pid, cam) = parse_market_filename("-1_c3s2_000000_00.jpg").unwrap();
        assert_eq!((pid, cam), (-1, 3));
        assert!(ImageRecord {
            image_path: "x".into(),
            person_id: pid,
            camera_id: cam
        }
        .is_junk());
    }

    #[test]
    fn rejects_nonconforming_names() {
        assert!(parse_market_filename("badname.jpg").is_err());
        assert!(parse_market_filename("12_x1.jpg").is_err());
        assert!(parse_market_filename("12_cX.jpg").is_err());
    }

    #[test]
    fn scans_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        for sub in ["bounding_box_train", "query", "bounding_box_test"] {
            std::fs::create_dir(dir.path().join(sub)).unwrap();
        }
        let touch = |sub: &str, name: &str| {
            std::fs::write(dir.path().join(sub).join(name), b"x").unwrap();
        };
        touch("bounding_box_train", "0001_c1s1_0001_00.jpg");
        touch("bounding_box_train", "0001_c2s1_0002_00.jpg");
        touch("bounding_box_train", "0007_c1s1_0003_00.jpg");
        touch("bounding_box_train", "0007_c2s1_0004_00.jpg");
        touch("bounding_box_train", "Thumbs.db");
        touch("query", "0042_c1s1_0001_00.jpg");
        touch("bounding_box_test", "0042_c2s1_0009_00.jpg");
        touch("bounding_box_test", "-1_c1s1_0010_00.jpg");

        let split = scan_market_directory(dir.path()).unwrap();
        assert_eq!(split.train.len(), 4);
        assert_eq!(split.class_index.num_classes(), 2);
        assert_eq!(split.query.len(), 1);
        assert_eq!(split.gallery.len(), 2);
        assert!(split.gallery.iter().any(|r| r.is_junk()));
    }
}
