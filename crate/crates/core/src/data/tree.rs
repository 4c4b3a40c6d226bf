use std::path::{Path, PathBuf};

use crate::data::metadata::{Split, CLASS_NAMES};
use crate::error::{Error, Result};

/// Lists `<root>/<split>/<ClassName>/*.png` as (path, label), sorted by
/// class and then file name.
pub fn scan_split(root: &Path, split: Split) -> Result<Vec<(PathBuf, usize)>> {
    let split_dir = root.join(split.name());
    if !split_dir.is_dir() {
        return Err(Error::Data(format!("missing split directory {}", split_dir.display())));
    }
    let mut out = Vec::new();
    for (label, class) in CLASS_NAMES.iter().enumerate() {
        let dir = split_dir.join(class);
        if !dir.is_dir() {
            return Err(Error::Data(format!("missing class directory {}", dir.display())));
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io_path(&dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| Error::io_path(&dir, e)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        out.extend(files.into_iter().map(|p| (p, label)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scans_in_class_order() {
        let dir = tempfile::tempdir().unwrap();
        for class in CLASS_NAMES {
            let d = dir.path().join("train").join(class);
            std::fs::create_dir_all(&d).unwrap();
            std::fs::write(d.join("b.png"), b"").unwrap();
            std::fs::write(d.join("a.png"), b"").unwrap();
            std::fs::write(d.join("notes.txt"), b"").unwrap();
        }
        let items = scan_split(dir.path(), Split::Train).unwrap();
        assert_eq!(items.len(), 6);
        assert_eq!(items.iter().map(|i| i.1).collect::<Vec<_>>(), vec![0, 0, 1, 1, 2, 2]);
        assert!(items[0].0.ends_with("Normal/a.png"));
        assert!(scan_split(dir.path(), Split::Test).is_err());
    }
}
