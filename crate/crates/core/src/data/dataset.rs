use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{load_image, GrayImage};
use crate::error::{Error, Result};

/// A degraded scan and its binary ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentPair {
    pub id: String,
    pub year: u32,
    pub degraded: GrayImage,
    /// Values in `{0, 1}`; 0 is ink.
    pub ground_truth: GrayImage,
}

impl DocumentPair {
    pub fn new(
        id: impl Into<String>,
        year: u32,
        degraded: GrayImage,
        ground_truth: GrayImage,
    ) -> Result<Self> {
        let id = id.into();
        if degraded.width() != ground_truth.width() || degraded.height() != ground_truth.height() {
            return Err(Error::Data(format!(
                "pair {year}/{id}: degraded is {}x{} but ground truth is {}x{}",
                degraded.width(),
                degraded.height(),
                ground_truth.width(),
                ground_truth.height()
            )));
        }
        Ok(DocumentPair {
            id,
            year,
            degraded,
            ground_truth: threshold_ground_truth(&ground_truth),
        })
    }
}

/// Snaps anti-aliased ground truth to `{0, 1}` at 0.5.
pub fn threshold_ground_truth(gt: &GrayImage) -> GrayImage {
    GrayImage::from_fn(gt.width(), gt.height(), |x, y| {
        if gt.get(x, y) >= 0.5 {
            1.0
        } else {
            0.0
        }
    })
}

const EXTENSIONS: [&str; 2] = ["png", "pgm"];

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(files);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let supported = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if !supported {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            files.insert(stem.to_string(), path);
        }
    }
    Ok(files)
}

/// Lists the years present under `root`, sorted.
pub fn dataset_years(root: impl AsRef<Path>) -> Result<Vec<u32>> {
    let root = root.as_ref();
    let mut years = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if !path.is_dir() {
            continue;
        }
        if let Some(year) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse().ok())
        {
            years.push(year);
        }
    }
    years.sort_unstable();
    Ok(years)
}

/// Loads every pair under `root/<year>/{degraded,gt}/<id>.<ext>`, sorted by
/// year then id. Directories whose name is not a year are ignored.
pub fn enumerate_dataset(root: impl AsRef<Path>) -> Result<Vec<DocumentPair>> {
    let root = root.as_ref();
    let mut pairs = Vec::new();
    for year in dataset_years(root)? {
        let year_dir = root.join(year.to_string());
        let degraded = image_files(&year_dir.join("degraded"))?;
        let gt = image_files(&year_dir.join("gt"))?;
        if let Some(orphan) = gt.keys().find(|id| !degraded.contains_key(*id)) {
            return Err(Error::Data(format!(
                "ground truth {year}/{orphan} has no degraded image"
            )));
        }
        for (id, degraded_path) in degraded {
            let gt_path = gt.get(&id).ok_or_else(|| {
                Error::Data(format!("degraded image {year}/{id} has no ground truth"))
            })?;
            pairs.push(DocumentPair::new(
                id,
                year,
                load_image(&degraded_path)?,
                load_image(gt_path)?,
            )?);
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::save_image;

    fn write(root: &Path, rel: &str, img: &GrayImage) {
        let path = root.join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_image(img, path).unwrap();
    }

    #[test]
    fn empty_directory_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        assert!(enumerate_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn unmatched_degraded_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "2011/degraded/HW3.png",
            &GrayImage::filled(4, 4, 0.5),
        );
        let err = enumerate_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("HW3"), "{err}");
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "2011/degraded/a.png",
            &GrayImage::filled(4, 4, 0.5),
        );
        write(dir.path(), "2011/gt/a.pgm", &GrayImage::filled(5, 4, 1.0));
        assert!(matches!(enumerate_dataset(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn sorted_and_ground_truth_thresholded() {
        let dir = tempfile::tempdir().unwrap();
        let soft = GrayImage::from_fn(4, 1, |x, _| [0.0, 0.4, 0.6, 1.0][x]);
        for rel in ["2012/x/b", "2010/x/z", "2012/x/a"] {
            let deg = rel.replace("/x/", "/degraded/") + ".png";
            let gt = rel.replace("/x/", "/gt/") + ".png";
            write(dir.path(), &deg, &GrayImage::filled(4, 1, 0.3));
            write(dir.path(), &gt, &soft);
        }
        let pairs = enumerate_dataset(dir.path()).unwrap();
        let keys: Vec<_> = pairs.iter().map(|p| (p.year, p.id.as_str())).collect();
        assert_eq!(keys, vec![(2010, "z"), (2012, "a"), (2012, "b")]);
        assert_eq!(pairs[0].ground_truth.pixels(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
